//! Segmentation overlap, score-agreement and loss metrics, plus the
//! patient-wise k-fold planner.
//!
//! Conventions:
//! - Two empty masks overlap perfectly: `iou = dice = 1`.
//! - BCE uses the natural log with predictions clamped to `[1e-7, 1 - 1e-7]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volio::MaskVolume;

/// Clamp applied to probabilities before taking logs in [`bce`].
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_bits(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Voxel-wise confusion counts of `pred` against `truth`.
pub fn confusion(pred: &MaskVolume, truth: &MaskVolume) -> Result<ConfusionCounts> {
    pred.dims().ensure_same(&truth.dims())?;
    Ok(ConfusionCounts::from_bits(pred.bits(), truth.bits()))
}

/// `tp / (tp + fp + fn)`; 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// `2 tp / (2 tp + fp + fn)`; 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Mean over transverse slices of the slice-wise Dice score.
///
/// Slices empty in both masks count as 1, slices empty in exactly one as 0.
pub fn per_slice_dice_mean(pred: &MaskVolume, truth: &MaskVolume) -> Result<f64> {
    pred.dims().ensure_same(&truth.dims())?;
    let nz = pred.dims().nz;
    let sum: f64 = (0..nz)
        .map(|z| dice(&ConfusionCounts::from_bits(pred.slice(z), truth.slice(z))))
        .sum();
    Ok(sum / nz as f64)
}

/// Absolute percentage error `|true - pred| / |true| * 100`.
pub fn ape(y_true: f64, y_pred: f64) -> Result<f64> {
    if y_true == 0.0 {
        return Err(Error::Undefined("APE with a zero true value".into()));
    }
    Ok((y_true - y_pred).abs() / y_true.abs() * 100.0)
}

/// Mean of per-sample [`ape`].
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_len(y_true, y_pred)?;
    if y_true.is_empty() {
        return Err(Error::InvalidInput("MAPE needs at least one sample".into()));
    }
    let mut sum = 0.0;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        sum += ape(t, p)?;
    }
    Ok(sum / y_true.len() as f64)
}

/// Coefficient of determination `1 - RSS/TSS` of `y_pred` against `y_true`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_len(y_true, y_pred)?;
    if y_true.len() < 2 {
        return Err(Error::InvalidInput("R² needs at least two samples".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let tss: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::Undefined("R² with constant true values (TSS = 0)".into()));
    }
    let rss: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - rss / tss)
}

/// Mean binary cross-entropy, natural log, predictions clamped by [`BCE_EPSILON`].
pub fn bce(y: &[f64], y_prob: &[f64]) -> Result<f64> {
    same_len(y, y_prob)?;
    unit_interval(y, "labels")?;
    unit_interval(y_prob, "probabilities")?;
    if y.is_empty() {
        return Err(Error::InvalidInput("BCE needs at least one sample".into()));
    }
    let sum: f64 = y
        .iter()
        .zip(y_prob)
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / y.len() as f64)
}

/// `1 - soft IoU`, soft IoU = `Σtp / (Σt + Σp - Σtp)`; 0 when both are all zero.
pub fn jaccard_loss(truth_prob: &[f64], pred_prob: &[f64]) -> Result<f64> {
    same_len(truth_prob, pred_prob)?;
    unit_interval(truth_prob, "truth")?;
    unit_interval(pred_prob, "predictions")?;
    let inter: f64 = truth_prob.iter().zip(pred_prob).map(|(t, p)| t * p).sum();
    let union = truth_prob.iter().sum::<f64>() + pred_prob.iter().sum::<f64>() - inter;
    if union == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - inter / union)
}

/// Training objective: [`bce`] plus [`jaccard_loss`].
pub fn bce_jaccard_loss(truth: &[f64], pred_prob: &[f64]) -> Result<f64> {
    Ok(bce(truth, pred_prob)? + jaccard_loss(truth, pred_prob)?)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

fn unit_interval(v: &[f64], what: &str) -> Result<()> {
    match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(bad) => Err(Error::InvalidInput(format!("{what} must lie in [0, 1], got {bad}"))),
        None => Ok(()),
    }
}

/// Ordinary least squares fit of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation; 0 when `y` is constant.
    pub r: f64,
    /// `1 - RSS/TSS` of the fitted line.
    pub r_squared: f64,
    pub n: usize,
}

pub fn regression_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    same_len(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput("regression needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("regression with constant x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (r, r_squared) = if syy == 0.0 {
        (0.0, 0.0)
    } else {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
            .sum();
        ((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), 1.0 - rss / syy)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r,
        r_squared,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan<T> {
    pub folds: Vec<Fold<T>>,
}

/// Seeded shuffle, then `k` contiguous test chunks whose sizes differ by at
/// most one, larger chunks first. Training sets keep the input order.
pub fn kfold_split<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<FoldPlan<T>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} ids",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let test_idx = &order[start..start + size];
        start += size;
        let mut in_test = vec![false; ids.len()];
        for &i in test_idx {
            in_test[i] = true;
        }
        folds.push(Fold {
            train: (0..ids.len()).filter(|&i| !in_test[i]).map(|i| ids[i].clone()).collect(),
            test: test_idx.iter().map(|&i| ids[i].clone()).collect(),
        });
    }
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volio::{Dims, VoxelSpacing};
    use proptest::prelude::*;

    fn mask(dims: (usize, usize, usize), bits: &[u8]) -> MaskVolume {
        MaskVolume::from_u8(
            Dims::new(dims.0, dims.1, dims.2).unwrap(),
            VoxelSpacing::new(1.0, 1.0, 1.0).unwrap(),
            bits,
        )
        .unwrap()
    }

    fn cc(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_cases() {
        let a = mask((2, 2, 2), &[1, 1, 0, 0, 1, 1, 0, 0]);
        assert_eq!(confusion(&a, &a).unwrap(), cc(4, 0, 0, 4));

        let empty = mask((2, 2, 2), &[0; 8]);
        let five = mask((2, 2, 2), &[1, 1, 1, 1, 1, 0, 0, 0]);
        let c = confusion(&empty, &five).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 5));

        // pred {a, b}, truth {b, c} over voxels a b c d
        let pred = mask((4, 1, 1), &[1, 1, 0, 0]);
        let truth = mask((4, 1, 1), &[0, 1, 1, 0]);
        assert_eq!(confusion(&pred, &truth).unwrap(), cc(1, 1, 1, 1));

        assert!(confusion(&pred, &mask((2, 2, 1), &[0; 4])).is_err());
    }

    #[test]
    fn iou_and_dice_values() {
        assert_eq!(iou(&cc(4, 0, 0, 4)), 1.0);
        assert_eq!(iou(&cc(0, 3, 2, 0)), 0.0);
        assert!((iou(&cc(1, 1, 1, 1)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&cc(4, 0, 0, 4)), 1.0);
        assert_eq!(dice(&cc(1, 1, 1, 1)), 0.5);
        assert_eq!(iou(&cc(0, 0, 0, 9)), 1.0);
        assert_eq!(dice(&cc(0, 0, 0, 9)), 1.0);
    }

    #[test]
    fn per_slice_dice_cases() {
        let a = mask((2, 1, 2), &[1, 0, 1, 0]);
        let b = mask((2, 1, 2), &[1, 0, 0, 1]);
        assert_eq!(per_slice_dice_mean(&a, &a).unwrap(), 1.0);
        assert_eq!(per_slice_dice_mean(&a, &b).unwrap(), 0.5);
        let e = mask((2, 1, 2), &[0; 4]);
        assert_eq!(per_slice_dice_mean(&e, &e).unwrap(), 1.0);
        // slice 0 agrees, slice 1 only one side non-empty
        let c = mask((2, 1, 2), &[1, 0, 0, 0]);
        assert_eq!(per_slice_dice_mean(&a, &c).unwrap(), 0.5);
    }

    #[test]
    fn ape_cases() {
        assert_eq!(ape(50.0, 50.0).unwrap(), 0.0);
        assert!((ape(100.0, 110.0).unwrap() - 10.0).abs() < 1e-12);
        // 185 / 7892 * 100 = 2.34414...
        let v = ape(7892.0, 7707.0).unwrap();
        assert!((v - 2.344).abs() < 1e-3, "{v}");
        assert!(ape(0.0, 1.0).is_err());
    }

    #[test]
    fn mape_cases() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[40.0], &[30.0]).unwrap(), ape(40.0, 30.0).unwrap());
        assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(mape(&[1.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(mape(&[], &[]).is_err());
    }

    #[test]
    fn r_squared_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        // RSS = 0.01 + 0.01 + 0.04 = 0.06, TSS = 2
        assert!((r_squared(&y, &[1.1, 1.9, 3.2]).unwrap() - 0.97).abs() < 1e-9);
        assert!(r_squared(&[5.0, 5.0], &[1.0, 2.0]).is_err());
        assert!(r_squared(&[5.0], &[5.0]).is_err());
    }

    #[test]
    fn bce_cases() {
        assert!(bce(&[1.0], &[1.0]).unwrap() <= 1e-6);
        assert!((bce(&[1.0], &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-9);
        assert!((bce(&[0.0, 1.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-9);
        assert!(bce(&[1.0], &[0.5, 0.5]).is_err());
        // clamped: a confident wrong answer is large but finite
        let worst = bce(&[1.0], &[0.0]).unwrap();
        assert!(worst.is_finite() && (worst - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(jaccard_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((jaccard_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let combined = bce_jaccard_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((combined - (2f64.ln() + 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn regression_cases() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = regression_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.r - 1.0).abs() < 1e-12);

        let flat = regression_fit(&x, &[3.0; 4]).unwrap();
        assert_eq!((flat.slope, flat.r, flat.r_squared), (0.0, 0.0, 0.0));

        assert!(regression_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(regression_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn kfold_matches_four_fold_layout() {
        let ids: Vec<u32> = (1..=11).collect();
        let plan = kfold_split(&ids, 4, 7).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2]);
        assert_eq!(plan, kfold_split(&ids, 4, 7).unwrap());
    }

    #[test]
    fn kfold_edge_cases() {
        let ids = ["a", "b", "c"];
        let plan = kfold_split(&ids, 3, 0).unwrap();
        assert!(plan.folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 2));
        assert!(kfold_split(&ids, 4, 0).is_err());
        assert!(kfold_split(&ids, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn dice_iou_identity(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            prop_assume!(tp + fp + fn_ > 0);
            let c = cc(tp, fp, fn_, 0);
            let i = iou(&c);
            prop_assert!((dice(&c) - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }

        #[test]
        fn overlap_metrics_are_symmetric(a in proptest::collection::vec(0u8..2, 32), b in proptest::collection::vec(0u8..2, 32)) {
            let (p, t) = (mask((4, 2, 4), &a), mask((4, 2, 4), &b));
            let ab = confusion(&p, &t).unwrap();
            let ba = confusion(&t, &p).unwrap();
            prop_assert_eq!(iou(&ab), iou(&ba));
            prop_assert_eq!(dice(&ab), dice(&ba));
            prop_assert_eq!(per_slice_dice_mean(&p, &t).unwrap(), per_slice_dice_mean(&t, &p).unwrap());
            prop_assert_eq!(ab.total(), 32);
        }

        #[test]
        fn mape_nonnegative(t in proptest::collection::vec(1.0f64..1e4, 1..20), noise in proptest::collection::vec(-1e3f64..1e3, 20)) {
            let p: Vec<f64> = t.iter().zip(&noise).map(|(a, b)| a + b).collect();
            prop_assert!(mape(&t, &p).unwrap() >= 0.0);
            prop_assert_eq!(mape(&t, &t).unwrap(), 0.0);
        }

        #[test]
        fn bce_decreases_in_confidence(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bce(&[1.0], &[hi]).unwrap() <= bce(&[1.0], &[lo]).unwrap());
        }

        #[test]
        fn regression_r_squared_matches_pearson(pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Ok(f) = regression_fit(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&f.r));
                prop_assert!((f.r * f.r - f.r_squared).abs() < 1e-9);
            }
        }

        #[test]
        fn kfold_partitions(n in 2usize..60, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let ids: Vec<usize> = (0..n).collect();
            let plan = kfold_split(&ids, k, seed).unwrap();
            let mut seen = vec![0; n];
            for f in &plan.folds {
                for &i in &f.test { seen[i] += 1; }
                prop_assert_eq!(f.train.len() + f.test.len(), n);
                prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
