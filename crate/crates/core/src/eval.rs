//! Classification and regression metrics: confusion matrix, accuracy with an
//! exact binomial confidence interval, no-information rate, one-sided
//! binomial p-value, Cohen's kappa, and MAE.

use std::fmt::Display;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Smallest p-value rendered numerically in human output.
pub const P_VALUE_FLOOR: f64 = 2.2e-16;

/// Square count table: rows are predictions, columns are references.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::domain(format!("confusion table must be {k}×{k}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Count of (predicted = `pred`, reference = `reference`).
    pub fn get(&self, pred: usize, reference: usize) -> u64 {
        self.counts[pred][reference]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::domain("empty confusion matrix")),
            t => Ok(t as f64),
        }
    }

    /// CSV with class names as header row and first column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["prediction\\reference".to_string()];
        head.extend(self.classes.iter().cloned());
        w.write_record(&head)?;
        for (name, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tally predictions against references over a fixed class list.
pub fn confusion<L: PartialEq + Display>(preds: &[L], refs: &[L], classes: &[L]) -> Result<ConfusionMatrix> {
    if preds.len() != refs.len() {
        return Err(Error::DimensionMismatch { expected: refs.len(), got: preds.len() });
    }
    let k = classes.len();
    let position = |l: &L| classes.iter().position(|c| c == l).ok_or_else(|| Error::domain(format!("label {l} not in class list")));
    let mut counts = vec![vec![0u64; k]; k];
    for (p, r) in preds.iter().zip(refs) {
        counts[position(p)?][position(r)?] += 1;
    }
    ConfusionMatrix::from_counts(classes.iter().map(ToString::to_string).collect(), counts)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.correct() as f64 / cm.nonempty_total()?)
}

/// Accuracy of always predicting the most common reference class.
pub fn nir(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty_total()?;
    Ok(cm.col_sums().into_iter().max().unwrap_or(0) as f64 / total)
}

pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty_total()?;
    let po = cm.correct() as f64 / total;
    let pe: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum::<f64>()
        / (total * total);
    if (1.0 - pe).abs() < 1e-15 {
        return Err(Error::domain("kappa undefined: chance agreement is 1"));
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiMethod {
    #[default]
    ClopperPearson,
    Wilson,
}

/// Smallest `p` with `I_p(a, b) >= target` by bisection.
fn beta_quantile(target: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) two-sided 95% interval for a binomial proportion.
pub fn ci95_exact(successes: u64, trials: u64) -> Result<(f64, f64)> {
    check_counts(successes, trials)?;
    let (x, n) = (successes as f64, trials as f64);
    let alpha = 0.05;
    let lo = if successes == 0 { 0.0 } else { beta_quantile(alpha / 2.0, x, n - x + 1.0) };
    let hi = if successes == trials { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, x + 1.0, n - x) };
    Ok((lo, hi))
}

/// Wilson score interval at 95%.
pub fn ci95_wilson(successes: u64, trials: u64) -> Result<(f64, f64)> {
    check_counts(successes, trials)?;
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

pub fn ci95(successes: u64, trials: u64, method: CiMethod) -> Result<(f64, f64)> {
    match method {
        CiMethod::ClopperPearson => ci95_exact(successes, trials),
        CiMethod::Wilson => ci95_wilson(successes, trials),
    }
}

fn check_counts(successes: u64, trials: u64) -> Result<()> {
    if trials == 0 || successes > trials {
        return Err(Error::domain(format!("invalid binomial counts {successes}/{trials}")));
    }
    Ok(())
}

/// One-sided `P[X >= successes]` for `X ~ Binomial(trials, nir)`, summed in log space.
pub fn p_acc_gt_nir(successes: u64, trials: u64, nir: f64) -> Result<f64> {
    check_counts(successes, trials)?;
    if !(0.0..=1.0).contains(&nir) {
        return Err(Error::domain(format!("NIR {nir} is not a probability")));
    }
    if successes == 0 {
        return Ok(1.0);
    }
    if nir == 0.0 {
        return Ok(0.0);
    }
    if nir == 1.0 {
        return Ok(1.0);
    }
    let n = trials as f64;
    let (lp, lq) = (nir.ln(), (1.0 - nir).ln());
    let ln_n_fact = ln_gamma(n + 1.0);
    let terms: Vec<f64> = (successes..=trials)
        .map(|k| {
            let k = k as f64;
            ln_n_fact - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * lp + (n - k) * lq
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Human rendering of a p-value, with the conventional `<2.2e-16` floor.
pub fn format_p_value(p: f64) -> String {
    if p < P_VALUE_FLOOR { "<2.2e-16".to_string() } else { format!("{p:.4e}") }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub ci95: [f64; 2],
    pub nir: f64,
    pub p_value: f64,
    pub kappa: f64,
}

impl ClassificationReport {
    pub fn from_confusion(cm: &ConfusionMatrix, method: CiMethod) -> Result<Self> {
        let (correct, total) = (cm.correct(), cm.total());
        let nir = nir(cm)?;
        let (lo, hi) = ci95(correct, total, method)?;
        Ok(ClassificationReport {
            accuracy: accuracy(cm)?,
            ci95: [lo, hi],
            nir,
            p_value: p_acc_gt_nir(correct, total, nir)?,
            kappa: kappa(cm)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    /// Multi-line summary in the usual caret layout.
    pub fn summary(&self) -> String {
        format!(
            "Accuracy : {:.4}\n95% CI : ({:.4}, {:.4})\nNo Information Rate : {:.4}\nP-Value [Acc > NIR] : {}\nKappa : {:.4}\n",
            self.accuracy,
            self.ci95[0],
            self.ci95[1],
            self.nir,
            format_p_value(self.p_value),
            self.kappa
        )
    }
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::domain("MAE of an empty list"));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_cells() {
        let cm = confusion(&["A", "B"], &["A", "B"], &["A", "B"]).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0], vec![0, 1]]);
        let cm = confusion(&["A", "A"], &["A", "B"], &["A", "B"]).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1)), (1, 1));
        assert_eq!(cm.total(), 2);
        assert!(confusion(&["C"], &["A"], &["A", "B"]).is_err());
        assert!(confusion(&["A"], &["A", "B"], &["A", "B"]).is_err());
    }

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_counts(names(3), vec![vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 2]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert!((kappa(&cm).unwrap() - 1.0).abs() < 1e-12);
        assert!((nir(&cm).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_tables() {
        let empty = ConfusionMatrix::from_counts(names(2), vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(accuracy(&empty).is_err());
        let one_class = ConfusionMatrix::from_counts(names(2), vec![vec![4, 0], vec![0, 0]]).unwrap();
        assert!(kappa(&one_class).is_err());
        assert!(ConfusionMatrix::from_counts(names(2), vec![vec![1]]).is_err());
    }

    #[test]
    fn ci_boundaries() {
        assert_eq!(ci95_exact(0, 20).unwrap().0, 0.0);
        assert_eq!(ci95_exact(20, 20).unwrap().1, 1.0);
        assert!(ci95_exact(3, 2).is_err());
        assert!(ci95_exact(0, 0).is_err());
        let (lo, hi) = ci95_wilson(934, 1019).unwrap();
        assert!(lo < 934.0 / 1019.0 && 934.0 / 1019.0 < hi);
    }

    #[test]
    fn p_value_closed_forms() {
        assert!((p_acc_gt_nir(20, 20, 0.5).unwrap() - 2f64.powi(-20)).abs() < 1e-18);
        assert_eq!(p_acc_gt_nir(0, 10, 0.3).unwrap(), 1.0);
        let p = p_acc_gt_nir(50, 100, 0.5).unwrap();
        assert!((p - 0.5).abs() < 0.1, "{p}");
        assert!(p_acc_gt_nir(934, 1019, 0.3111).unwrap() < 1e-15);
        assert_eq!(format_p_value(1e-300), "<2.2e-16");
        assert_eq!(format_p_value(0.5), "5.0000e-1");
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0], &[10.0]).unwrap(), 10.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[]).is_err());
    }

    #[test]
    fn report_json_keys() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![40, 5], vec![3, 52]]).unwrap();
        let r = ClassificationReport::from_confusion(&cm, CiMethod::ClopperPearson).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, ["accuracy", "ci95", "kappa", "nir", "p_value"]);
        assert!(r.ci95[0] <= r.accuracy && r.accuracy <= r.ci95[1]);
        assert!(r.summary().contains("Kappa"));
    }

    #[test]
    fn confusion_csv() {
        let cm = ConfusionMatrix::from_counts(vec!["Fast".into(), "Slow".into()], vec![vec![1, 2], vec![3, 4]]).unwrap();
        let mut buf = Vec::new();
        cm.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "prediction\\reference,Fast,Slow\nFast,1,2\nSlow,3,4\n");
    }

    proptest! {
        #[test]
        fn statistics_ignore_pair_order(
            pairs in prop::collection::vec((0u8..4, 0u8..4), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let classes: Vec<u8> = (0..4).collect();
            let (p, r): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let a = confusion(&p, &r, &classes).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::split::rng(seed));
            let (p2, r2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
            let b = confusion(&p2, &r2, &classes).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(accuracy(&a).unwrap(), accuracy(&b).unwrap());
            if let (Ok(ka), Ok(kb)) = (kappa(&a), kappa(&b)) {
                prop_assert_eq!(ka, kb);
                prop_assert!(ka <= 1.0 + 1e-12);
                let off_diag = a.total() - a.correct();
                prop_assert_eq!(off_diag == 0, (ka - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn ci_is_monotone_in_successes(n in 1u64..200, x in 0u64..200) {
            let x = x % n;
            let (lo1, hi1) = ci95_exact(x, n).unwrap();
            let (lo2, hi2) = ci95_exact(x + 1, n).unwrap();
            prop_assert!(lo2 >= lo1 && hi2 >= hi1);
            prop_assert!(lo1 <= x as f64 / n as f64 && x as f64 / n as f64 <= hi1);
        }
    }
}
