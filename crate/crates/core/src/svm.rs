//! Soft-margin kernel SVM: SMO solver, one-vs-one multiclass voting and a
//! cross-validated grid tuner.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::domain::SpeedLabel;
use crate::error::{Error, Result};
use crate::features::{fit_scaler, FeatureMatrix, ScalerParams};
use crate::par::{self, Execution};
use crate::split::{stratified_folds, train_test_split};

pub const MODEL_FORMAT: &str = "netlat-svm";
pub const MODEL_VERSION: u32 = 1;

/// Floor for the curvature of a non-positive-definite working pair.
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `u'v`
    Linear,
    /// `(gamma u'v + coef0)^degree`
    Polynomial { degree: u32, gamma: f64, coef0: f64 },
    /// `exp(-gamma |u - v|^2)`
    #[serde(rename = "radial")]
    Rbf { gamma: f64 },
    /// `tanh(gamma u'v + coef0)`
    Sigmoid { gamma: f64, coef0: f64 },
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl KernelSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Linear => KernelKind::Linear,
            KernelSpec::Polynomial { .. } => KernelKind::Polynomial,
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
            KernelSpec::Sigmoid { .. } => KernelKind::Sigmoid,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Polynomial { gamma, .. } | KernelSpec::Rbf { gamma } | KernelSpec::Sigmoid { gamma, .. } => {
                Some(gamma)
            }
        }
    }

    pub fn degree(&self) -> Option<u32> {
        match *self {
            KernelSpec::Polynomial { degree, .. } => Some(degree),
            _ => None,
        }
    }

    pub fn coef0(&self) -> Option<f64> {
        match *self {
            KernelSpec::Polynomial { coef0, .. } | KernelSpec::Sigmoid { coef0, .. } => Some(coef0),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::domain(format!("kernel gamma must be positive, got {g}")));
            }
        }
        if self.degree() == Some(0) {
            return Err(Error::domain("polynomial degree must be at least 1"));
        }
        if let Some(c) = self.coef0() {
            if !c.is_finite() {
                return Err(Error::domain("kernel coef0 must be finite"));
            }
        }
        Ok(())
    }

    fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(u, v),
            KernelSpec::Polynomial { degree, gamma, coef0 } => (gamma * dot(u, v) + coef0).powi(degree as i32),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Sigmoid { gamma, coef0 } => (gamma * dot(u, v) + coef0).tanh(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, gamma, coef0 } => {
                write!(f, "polynomial(degree={degree}, gamma={gamma}, coef0={coef0})")
            }
            KernelSpec::Rbf { gamma } => write!(f, "radial(gamma={gamma})"),
            KernelSpec::Sigmoid { gamma, coef0 } => write!(f, "sigmoid(gamma={gamma}, coef0={coef0})"),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    Ok(spec.eval(u, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: KernelSpec,
    pub cost: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iter: usize,
    pub cache_mb: usize,
    /// Standardize features with statistics from the training rows.
    pub scale: bool,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: KernelSpec::Rbf { gamma: 1.0 / 32.0 },
            cost: 1.0,
            tolerance: 1e-3,
            max_iter: 10_000_000,
            cache_mb: 40,
            scale: true,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl SvmConfig {
    /// Best cell of the published tuning run: radial kernel, gamma 1/32, cost 256,
    /// with the 200 MB kernel cache used there.
    pub fn published_best() -> Self {
        SvmConfig { kernel: KernelSpec::Rbf { gamma: 1.0 / 32.0 }, cost: 256.0, cache_mb: 200, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(Error::domain(format!("cost must be positive, got {}", self.cost)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::domain(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be positive"));
        }
        Ok(())
    }
}

/// LRU cache of kernel rows, bounded by a byte budget.
struct KernelCache<'a> {
    x: &'a [&'a [f64]],
    kernel: KernelSpec,
    rows: Vec<Option<(Rc<Vec<f64>>, u64)>>,
    clock: u64,
    len: usize,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [&'a [f64]], kernel: KernelSpec, cache_mb: usize) -> Self {
        let row_bytes = (x.len() * std::mem::size_of::<f64>()).max(1);
        let capacity = (cache_mb * 1024 * 1024 / row_bytes).max(2);
        KernelCache { x, kernel, rows: vec![None; x.len()], clock: 0, len: 0, capacity }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        self.clock += 1;
        if let Some((row, stamp)) = &mut self.rows[i] {
            *stamp = self.clock;
            return Rc::clone(row);
        }
        if self.len == self.capacity {
            let oldest = (0..self.rows.len())
                .filter_map(|k| self.rows[k].as_ref().map(|(_, s)| (*s, k)))
                .min()
                .map(|(_, k)| k)
                .expect("full cache has entries");
            self.rows[oldest] = None;
            self.len -= 1;
        }
        let xi = self.x[i];
        let row = Rc::new(self.x.iter().map(|xk| self.kernel.eval(xi, xk)).collect::<Vec<_>>());
        self.rows[i] = Some((Rc::clone(&row), self.clock));
        self.len += 1;
        row
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub kernel: KernelSpec,
    pub cost: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// Row index of each support vector in the training input.
    pub sv_indices: Vec<usize>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    /// `sum_i alpha_i y_i`, zero for a feasible dual.
    pub fn dual_sum(&self) -> f64 {
        self.coef.iter().sum()
    }

    fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.coef).map(|(sv, c)| c * self.kernel.eval(sv, x)).sum::<f64>() + self.bias
    }
}

fn check_binary_input(x: &[&[f64]], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::domain(format!("need at least 2 rows, got {}", x.len())));
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::domain(format!("labels must be +1 or -1, got {bad}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::domain("both classes must be present"));
    }
    Ok(dim)
}

/// Train a binary soft-margin SVM with SMO. Each step optimizes the pair made
/// of the maximal KKT violator and the partner with the largest second-order
/// gain; the run stops when the violation gap falls below `tolerance`.
pub fn smo_train(x: &[&[f64]], y: &[f64], config: &SvmConfig) -> Result<BinarySvm> {
    config.validate()?;
    check_binary_input(x, y)?;
    let n = x.len();
    let c = config.cost;
    let mut cache = KernelCache::new(x, config.kernel, config.cache_mb);
    let qd: Vec<f64> = x.iter().map(|r| config.kernel.eval(r, r)).collect();
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut gap;

    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if alpha[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        let ki = if i == usize::MAX { None } else { Some(cache.row(i)) };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let (in_low, g_t) = if y[t] > 0.0 { (alpha[t] > 0.0, grad[t]) } else { (alpha[t] < c, -grad[t]) };
            if !in_low {
                continue;
            }
            gmax2 = gmax2.max(g_t);
            let diff = gmax + g_t;
            if let Some(ki) = &ki {
                if diff > 0.0 {
                    let quad = qd[i] + qd[t] - 2.0 * ki[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        gap = gmax + gmax2;
        if gap < config.tolerance || j == usize::MAX {
            break;
        }
        if iterations >= config.max_iter {
            let best = finish(x, y, &alpha, &grad, config, iterations, false);
            return Err(Error::IterationCap { iterations, gap, best: Box::new(best) });
        }
        iterations += 1;

        let ki = ki.expect("i selected");
        let kj = cache.row(j);
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (ai_old, aj_old);
        if y[i] != y[j] {
            let quad = qd[i] + qd[j] - 2.0 * ki[j];
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = qd[i] + qd[j] - 2.0 * ki[j];
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - ai_old, aj - aj_old);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }
    Ok(finish(x, y, &alpha, &grad, config, iterations, true))
}

fn finish(
    x: &[&[f64]],
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    config: &SvmConfig,
    iterations: usize,
    converged: bool,
) -> BinarySvm {
    let c = config.cost;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    let sv_indices: Vec<usize> = (0..alpha.len()).filter(|&t| alpha[t] > 0.0).collect();
    BinarySvm {
        kernel: config.kernel,
        cost: c,
        support_vectors: sv_indices.iter().map(|&t| x[t].to_vec()).collect(),
        coef: sv_indices.iter().map(|&t| alpha[t] * y[t]).collect(),
        sv_indices,
        bias: -rho,
        iterations,
        converged,
    }
}

/// Decision value `f(x) = sum alpha_i y_i K(x_i, x) + b` and its sign (+1 when `f > 0`).
pub fn predict_binary(svm: &BinarySvm, x: &[f64]) -> Result<(f64, i8)> {
    if let Some(d) = svm.dim() {
        if d != x.len() {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
    }
    let f = svm.decision(x);
    Ok((f, if f > 0.0 { 1 } else { -1 }))
}

/// Number of training points violating the KKT conditions at `tol`.
pub fn kkt_violations(svm: &BinarySvm, x: &[&[f64]], y: &[f64], tol: f64) -> Result<usize> {
    check_binary_input(x, y)?;
    let mut alpha = vec![0.0; x.len()];
    for (&t, &c) in svm.sv_indices.iter().zip(&svm.coef) {
        alpha[t] = c * y[t];
    }
    let mut bad = 0;
    for t in 0..x.len() {
        let m = y[t] * predict_binary(svm, x[t])?.0;
        let ok = if alpha[t] <= 0.0 {
            m >= 1.0 - tol
        } else if alpha[t] >= svm.cost {
            m <= 1.0 + tol
        } else {
            (m - 1.0).abs() <= tol
        };
        if !ok {
            bad += 1;
        }
    }
    Ok(bad)
}

/// KKT violations at `tol` summed over every pair machine, re-deriving each
/// machine's training rows from `data` (the matrix the model was trained on).
pub fn kkt_audit(model: &MulticlassSvm, data: &FeatureMatrix, tol: f64) -> Result<usize> {
    let labels = data.label_target().ok_or_else(|| Error::domain("matrix has no speed-label target"))?;
    let rows: Vec<Vec<f64>> = data.rows().map(|r| model.scaled(r)).collect();
    let mut bad = 0;
    for pm in &model.machines {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == pm.positive || labels[i] == pm.negative).collect();
        let x: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == pm.positive { 1.0 } else { -1.0 }).collect();
        bad += kkt_violations(&pm.svm, &x, &y, tol)?;
    }
    Ok(bad)
}

/// Binary machine separating `positive` (+1) from `negative` (-1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: SpeedLabel,
    pub negative: SpeedLabel,
    pub svm: BinarySvm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    pub format: String,
    pub version: u32,
    pub columns: Vec<String>,
    /// Labels seen in training, ascending by ordinal.
    pub classes: Vec<SpeedLabel>,
    pub scaler: Option<ScalerParams>,
    pub config: SvmConfig,
    pub machines: Vec<PairMachine>,
    /// Solver warnings (iteration cap reached or approached).
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MulticlassSvm {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MulticlassSvm = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Schema(format!("unsupported model format {} v{}", m.format, m.version)));
        }
        let k = m.classes.len();
        if m.machines.len() != k * (k.saturating_sub(1)) / 2 {
            return Err(Error::Schema(format!("{} machines for {k} classes", m.machines.len())));
        }
        if let Some(s) = &m.scaler {
            if s.dim() != m.dim() {
                return Err(Error::Schema("scaler does not match column count".into()));
            }
        }
        for pm in &m.machines {
            if pm.svm.dim().is_some_and(|d| d != m.dim()) || pm.svm.coef.len() != pm.svm.support_vectors.len() {
                return Err(Error::Schema("support vectors do not match column count".into()));
            }
        }
        Ok(m)
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        match &self.scaler {
            Some(s) => s.transform_row(x),
            None => x.to_vec(),
        }
    }
}

/// One-vs-one training over every pair of labels present in `data`.
pub fn train_multiclass(data: &FeatureMatrix, config: &SvmConfig) -> Result<MulticlassSvm> {
    config.validate()?;
    let labels = data.label_target().ok_or_else(|| Error::domain("matrix has no speed-label target"))?;
    let mut by_class: BTreeMap<SpeedLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::domain(format!("need at least 2 classes, got {}", by_class.len())));
    }
    let scaler = if config.scale { Some(fit_scaler(data)?) } else { None };
    let rows: Vec<Vec<f64>> = match &scaler {
        Some(s) => data.rows().map(|r| s.transform_row(r)).collect(),
        None => data.rows().map(<[f64]>::to_vec).collect(),
    };
    let classes: Vec<SpeedLabel> = by_class.keys().copied().collect();
    let mut pairs = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            pairs.push((pos, neg));
        }
    }
    let trained = par::map(config.exec, &pairs, |&(pos, neg)| {
        let mut idx = by_class[&pos].clone();
        idx.extend(&by_class[&neg]);
        idx.sort_unstable();
        let x: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == pos { 1.0 } else { -1.0 }).collect();
        let (svm, warning) = match smo_train(&x, &y, config) {
            Ok(svm) => {
                let near_cap = svm.iterations >= config.max_iter / 10;
                let w = near_cap.then(|| format!("{pos} vs {neg}: {} iterations, approaching the cap", svm.iterations));
                (svm, w)
            }
            Err(Error::IterationCap { iterations, gap, best }) => {
                (*best, Some(format!("{pos} vs {neg}: reached max iterations ({iterations}), KKT gap {gap:.3e}")))
            }
            Err(e) => return Err(e),
        };
        Ok((PairMachine { positive: pos, negative: neg, svm }, warning))
    });
    let mut machines = Vec::with_capacity(trained.len());
    let mut warnings = Vec::new();
    for r in trained {
        let (m, w) = r?;
        machines.push(m);
        warnings.extend(w);
    }
    Ok(MulticlassSvm {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        columns: data.columns().to_vec(),
        classes,
        scaler,
        config: config.clone(),
        machines,
        warnings,
    })
}

/// Majority vote over the pair machines; ties go to the lowest ordinal.
pub fn predict_multiclass(model: &MulticlassSvm, x: &[f64]) -> Result<SpeedLabel> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    let z = model.scaled(x);
    let mut votes = vec![0usize; model.classes.len()];
    for pm in &model.machines {
        let winner = if pm.svm.decision(&z) > 0.0 { pm.positive } else { pm.negative };
        let k = model.classes.iter().position(|&c| c == winner).expect("machine labels are model classes");
        votes[k] += 1;
    }
    let best = votes.iter().enumerate().fold(0, |b, (k, &v)| if v > votes[b] { k } else { b });
    Ok(model.classes[best])
}

pub fn predict_all(model: &MulticlassSvm, data: &FeatureMatrix, exec: Execution) -> Result<Vec<SpeedLabel>> {
    par::map_range(exec, data.n_rows(), |i| predict_multiclass(model, data.row(i))).into_iter().collect()
}

/// `count` seeded train/test splits; split `k` uses seed `seed + k`.
pub fn model_splits(n: usize, count: usize, train_fraction: f64, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    (0..count as u64).map(|k| train_test_split(n, train_fraction, seed.wrapping_add(k))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Polynomial,
    #[serde(rename = "radial")]
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Polynomial => "polynomial",
            KernelKind::Rbf => "radial",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "polynomial" | "poly" => Ok(KernelKind::Polynomial),
            "radial" | "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::domain(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub kernels: Vec<KernelKind>,
    pub costs: Vec<f64>,
    pub gammas: Vec<f64>,
    pub degrees: Vec<u32>,
    pub coef0s: Vec<f64>,
}

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

impl TuneGrid {
    /// The published grid: costs 2^-5..2^10, gammas 2^-5..2^2, degrees 1..5,
    /// coef0 in {0.1, 0.5, 1, 2, 3, 4}, all four kernels.
    pub fn published() -> Self {
        TuneGrid {
            kernels: vec![KernelKind::Linear, KernelKind::Polynomial, KernelKind::Rbf, KernelKind::Sigmoid],
            costs: powers_of_two(-5, 10),
            gammas: powers_of_two(-5, 2),
            degrees: (1..=5).collect(),
            coef0s: vec![0.1, 0.5, 1.0, 2.0, 3.0, 4.0],
        }
    }

    /// Every applicable `(kernel, cost)` cell in kernel, cost, gamma, degree, coef0 order.
    pub fn cells(&self) -> Result<Vec<(KernelSpec, f64)>> {
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::domain(format!("grid has no {what}"))) };
        need(!self.kernels.is_empty(), "kernels")?;
        need(!self.costs.is_empty(), "costs")?;
        let uses = |k: KernelKind| self.kernels.contains(&k);
        if self.kernels.iter().any(|&k| k != KernelKind::Linear) {
            need(!self.gammas.is_empty(), "gammas")?;
        }
        if uses(KernelKind::Polynomial) {
            need(!self.degrees.is_empty(), "degrees")?;
        }
        if uses(KernelKind::Polynomial) || uses(KernelKind::Sigmoid) {
            need(!self.coef0s.is_empty(), "coef0 values")?;
        }
        let mut cells = Vec::new();
        for &kind in &self.kernels {
            for &cost in &self.costs {
                match kind {
                    KernelKind::Linear => cells.push((KernelSpec::Linear, cost)),
                    KernelKind::Rbf => cells.extend(self.gammas.iter().map(|&gamma| (KernelSpec::Rbf { gamma }, cost))),
                    KernelKind::Polynomial => {
                        for &gamma in &self.gammas {
                            for &degree in &self.degrees {
                                for &coef0 in &self.coef0s {
                                    cells.push((KernelSpec::Polynomial { degree, gamma, coef0 }, cost));
                                }
                            }
                        }
                    }
                    KernelKind::Sigmoid => {
                        for &gamma in &self.gammas {
                            for &coef0 in &self.coef0s {
                                cells.push((KernelSpec::Sigmoid { gamma, coef0 }, cost));
                            }
                        }
                    }
                }
            }
        }
        for (k, _) in &cells {
            k.validate()?;
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub kernel: KernelSpec,
    pub cost: f64,
    pub mean_cv_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub best: SvmConfig,
    pub best_accuracy: f64,
    /// One row per grid cell, in grid order.
    pub table: Vec<TuneRow>,
}

impl TuneResult {
    /// `kernel,cost,gamma,degree,coef0,mean_cv_accuracy`; inapplicable parameters are `NA`.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kernel", "cost", "gamma", "degree", "coef0", "mean_cv_accuracy"])?;
        for r in &self.table {
            w.write_record([
                r.kernel.kind().name().to_string(),
                r.cost.to_string(),
                opt(r.kernel.gamma().map(|g| g.to_string())),
                opt(r.kernel.degree().map(|d| d.to_string())),
                opt(r.kernel.coef0().map(|c| c.to_string())),
                format!("{:.6}", r.mean_cv_accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid search scored by mean accuracy over seeded stratified `folds`-fold CV.
/// Solver settings other than kernel and cost come from `base`; the first
/// cell in grid order wins ties.
pub fn tune(data: &FeatureMatrix, grid: &TuneGrid, folds: usize, seed: u64, base: &SvmConfig) -> Result<TuneResult> {
    let labels = data.label_target().ok_or_else(|| Error::domain("matrix has no speed-label target"))?;
    let cells = grid.cells()?;
    let fold_of = stratified_folds(labels, folds, seed)?;
    let splits: Vec<(FeatureMatrix, FeatureMatrix)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n_rows()).partition(|&i| fold_of[i] == f);
            (data.select_rows(&train), data.select_rows(&test))
        })
        .collect();
    let inner = SvmConfig { exec: Execution::Sequential, seed, ..base.clone() };
    let scores = par::map_range(base.exec, cells.len() * folds, |job| {
        let (kernel, cost) = cells[job / folds];
        let (train, test) = &splits[job % folds];
        let config = SvmConfig { kernel, cost, ..inner.clone() };
        let model = train_multiclass(train, &config)?;
        let pred = predict_all(&model, test, Execution::Sequential)?;
        let truth = test.label_target().expect("labels carried over");
        let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / truth.len() as f64)
    });
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    let table: Vec<TuneRow> = cells
        .iter()
        .zip(scores.chunks(folds))
        .map(|(&(kernel, cost), s)| TuneRow { kernel, cost, mean_cv_accuracy: s.iter().sum::<f64>() / folds as f64 })
        .collect();
    let best_row = table.iter().fold(&table[0], |b, r| if r.mean_cv_accuracy > b.mean_cv_accuracy { r } else { b });
    Ok(TuneResult {
        best: SvmConfig { kernel: best_row.kernel, cost: best_row.cost, seed, ..base.clone() },
        best_accuracy: best_row.mean_cv_accuracy,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Target;

    fn cfg(kernel: KernelSpec, cost: f64) -> SvmConfig {
        SvmConfig { kernel, cost, ..Default::default() }
    }

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(kernel_eval(&KernelSpec::Rbf { gamma: 0.7 }, &[3.0, -1.0], &[3.0, -1.0]).unwrap(), 1.0);
        let rbf = kernel_eval(&KernelSpec::Rbf { gamma: 0.5 }, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((rbf - (-1.0f64).exp()).abs() < 1e-15);
        let poly = KernelSpec::Polynomial { degree: 2, gamma: 1.0, coef0: 1.0 };
        assert_eq!(kernel_eval(&poly, &[1.0, 1.0], &[1.0, 2.0]).unwrap(), 16.0);
        let sig = KernelSpec::Sigmoid { gamma: 1.0, coef0: 0.0 };
        assert_eq!(kernel_eval(&sig, &[0.0], &[5.0]).unwrap(), 0.0);
        assert!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kernel_validation() {
        assert!(KernelSpec::Rbf { gamma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0, gamma: 1.0, coef0: 0.0 }.validate().is_err());
        assert!(KernelSpec::Sigmoid { gamma: 1.0, coef0: f64::NAN }.validate().is_err());
        assert!(SvmConfig { cost: 0.0, ..Default::default() }.validate().is_err());
        assert!(SvmConfig { tolerance: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn two_point_separable() {
        let x = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let y = [-1.0, 1.0];
        let svm = smo_train(&refs(&x), &y, &cfg(KernelSpec::Linear, 1.0)).unwrap();
        assert_eq!(predict_binary(&svm, &x[0]).unwrap().1, -1);
        assert_eq!(predict_binary(&svm, &x[1]).unwrap().1, 1);
        // boundary at the midpoint
        assert!(predict_binary(&svm, &[1.0, 1.0]).unwrap().0.abs() < 1e-3);
        assert!(svm.dual_sum().abs() <= 1e-6);
        assert!(svm.converged);
    }

    #[test]
    fn xor_with_rbf() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let svm = smo_train(&refs(&x), &y, &cfg(KernelSpec::Rbf { gamma: 1.0 }, 10.0)).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            let (f, s) = predict_binary(&svm, row).unwrap();
            assert_eq!(s as f64, label, "f = {f}");
        }
        assert_eq!(kkt_violations(&svm, &refs(&x), &y, 1e-2).unwrap(), 0);
    }

    #[test]
    fn margin_points_and_far_field() {
        let x = vec![vec![0.0], vec![1.0], vec![3.0], vec![4.0]];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let config = cfg(KernelSpec::Rbf { gamma: 0.5 }, 100.0);
        let svm = smo_train(&refs(&x), &y, &config).unwrap();
        for (&t, &c) in svm.sv_indices.iter().zip(&svm.coef) {
            let a = c * y[t];
            if a > 0.0 && a < svm.cost {
                let f = predict_binary(&svm, &x[t]).unwrap().0;
                assert!((f.abs() - 1.0).abs() <= config.tolerance, "{f}");
            }
        }
        let far = predict_binary(&svm, &[1e3]).unwrap().0;
        assert!((far - svm.bias).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let x = vec![vec![0.0], vec![1.0]];
        let config = cfg(KernelSpec::Linear, 1.0);
        assert!(matches!(smo_train(&refs(&x), &[1.0, 1.0], &config), Err(Error::Domain(_))));
        assert!(smo_train(&refs(&x), &[1.0, 0.0], &config).is_err());
        assert!(smo_train(&refs(&x[..1]), &[1.0], &config).is_err());
        let svm = smo_train(&refs(&x), &[1.0, -1.0], &config).unwrap();
        assert!(predict_binary(&svm, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn iteration_cap_returns_best_so_far() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let config = SvmConfig { max_iter: 2, ..cfg(KernelSpec::Rbf { gamma: 1.0 }, 10.0) };
        match smo_train(&refs(&x), &y, &config) {
            Err(Error::IterationCap { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert!(!best.converged);
                assert!(best.dual_sum().abs() < 1e-9);
            }
            other => panic!("expected iteration cap, got {other:?}"),
        }
    }

    #[test]
    fn cache_size_does_not_change_result() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.53).cos()]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] * r[1] > 0.0 { 1.0 } else { -1.0 }).collect();
        let big = smo_train(&refs(&x), &y, &cfg(KernelSpec::Rbf { gamma: 2.0 }, 5.0)).unwrap();
        let tiny = smo_train(&refs(&x), &y, &SvmConfig { cache_mb: 0, ..cfg(KernelSpec::Rbf { gamma: 2.0 }, 5.0) })
            .unwrap();
        assert_eq!(big, tiny);
    }

    fn labelled(rows: Vec<Vec<f64>>, labels: Vec<SpeedLabel>) -> FeatureMatrix {
        let cols = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::from_rows(cols, &rows, Some(Target::Label(labels))).unwrap()
    }

    /// Three well separated clusters on a line at 0, 10, 20.
    fn clusters() -> FeatureMatrix {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, label) in [SpeedLabel::from_ordinal(1), SpeedLabel::from_ordinal(3), SpeedLabel::from_ordinal(5)]
            .into_iter()
            .enumerate()
        {
            for i in 0..10 {
                rows.push(vec![10.0 * k as f64 + (i as f64 * 0.7).sin(), (i as f64).cos()]);
                labels.push(label.unwrap());
            }
        }
        labelled(rows, labels)
    }

    #[test]
    fn one_vs_one_machine_count_and_accuracy() {
        let data = clusters();
        let model = train_multiclass(&data, &cfg(KernelSpec::Linear, 1.0)).unwrap();
        assert_eq!(model.classes.len(), 3);
        assert_eq!(model.machines.len(), 3);
        let pred = predict_all(&model, &data, Execution::Sequential).unwrap();
        assert_eq!(pred, data.label_target().unwrap());
        assert!(predict_multiclass(&model, &[0.0]).is_err());
    }

    #[test]
    fn vote_ties_go_to_lowest_ordinal() {
        let data = clusters();
        let mut model = train_multiclass(&data, &cfg(KernelSpec::Linear, 1.0)).unwrap();
        // force a three-way cycle: 1 beats 3, 3 beats 5, 5 beats 1
        for pm in &mut model.machines {
            let winner_positive = !(pm.positive.ordinal() == 1 && pm.negative.ordinal() == 5);
            pm.svm.coef.iter_mut().for_each(|c| *c = 0.0);
            pm.svm.bias = if winner_positive { 1.0 } else { -1.0 };
        }
        assert_eq!(predict_multiclass(&model, &[5.0, 0.0]).unwrap().ordinal(), 1);
    }

    #[test]
    fn two_class_model_matches_binary_rule() {
        let mut data_rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let x = i as f64 / 2.0;
            data_rows.push(vec![x, (x * 1.3).sin()]);
            labels.push(if x < 5.0 { SpeedLabel::from_ordinal(2).unwrap() } else { SpeedLabel::from_ordinal(6).unwrap() });
        }
        let data = labelled(data_rows, labels);
        let config = cfg(KernelSpec::Rbf { gamma: 0.5 }, 4.0);
        let model = train_multiclass(&data, &config).unwrap();
        assert_eq!(model.machines.len(), 1);
        let pm = &model.machines[0];
        for r in data.rows() {
            let (_, s) = predict_binary(&pm.svm, &model.scaled(r)).unwrap();
            let expect = if s > 0 { pm.positive } else { pm.negative };
            assert_eq!(predict_multiclass(&model, r).unwrap(), expect);
        }
    }

    #[test]
    fn single_class_rejected() {
        let data = labelled(vec![vec![0.0], vec![1.0]], vec![SpeedLabel::from_ordinal(1).unwrap(); 2]);
        assert!(train_multiclass(&data, &SvmConfig::default()).is_err());
    }

    #[test]
    fn published_grid_dimensions() {
        let g = TuneGrid::published();
        assert_eq!(g.costs.len(), 16);
        assert_eq!((g.costs[0], g.costs[15]), (1.0 / 32.0, 1024.0));
        assert_eq!(g.gammas.len(), 8);
        assert_eq!((g.gammas[0], g.gammas[7]), (1.0 / 32.0, 4.0));
        assert_eq!(g.degrees, vec![1, 2, 3, 4, 5]);
        assert_eq!(g.coef0s, vec![0.1, 0.5, 1.0, 2.0, 3.0, 4.0]);
        // linear 16 + polynomial 16*8*5*6 + radial 16*8 + sigmoid 16*8*6
        assert_eq!(g.cells().unwrap().len(), 16 + 3840 + 128 + 768);
        let cells = g.cells().unwrap();
        assert_eq!(cells[0], (KernelSpec::Linear, 1.0 / 32.0));
        assert_eq!(cells[16], (KernelSpec::Polynomial { degree: 1, gamma: 1.0 / 32.0, coef0: 0.1 }, 1.0 / 32.0));
    }

    #[test]
    fn published_best_config() {
        let c = SvmConfig::published_best();
        assert_eq!(c.kernel, KernelSpec::Rbf { gamma: 1.0 / 32.0 });
        assert_eq!(c.cost, 256.0);
        assert_eq!(c.cache_mb, 200);
    }

    #[test]
    fn single_cell_grid_returns_that_cell() {
        let data = clusters();
        let grid = TuneGrid {
            kernels: vec![KernelKind::Sigmoid],
            costs: vec![2.0],
            gammas: vec![0.25],
            degrees: vec![],
            coef0s: vec![0.5],
        };
        let res = tune(&data, &grid, 5, 1, &SvmConfig::default()).unwrap();
        assert_eq!(res.table.len(), 1);
        assert_eq!(res.best.kernel, KernelSpec::Sigmoid { gamma: 0.25, coef0: 0.5 });
        assert_eq!(res.best.cost, 2.0);
        let mut buf = Vec::new();
        res.write_table_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kernel,cost,gamma,degree,coef0,mean_cv_accuracy\nsigmoid,2,0.25,NA,0.5,"));
    }

    #[test]
    fn grid_errors() {
        let data = clusters();
        let empty = TuneGrid { kernels: vec![], ..TuneGrid::published() };
        assert!(tune(&data, &empty, 5, 0, &SvmConfig::default()).is_err());
        let no_gamma = TuneGrid { kernels: vec![KernelKind::Rbf], gammas: vec![], ..TuneGrid::published() };
        assert!(no_gamma.cells().is_err());
        assert!(tune(&data, &TuneGrid { kernels: vec![KernelKind::Linear], ..TuneGrid::published() }, 31, 0, &SvmConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let model = train_multiclass(&clusters(), &cfg(KernelSpec::Rbf { gamma: 0.3 }, 2.0)).unwrap();
        let back = MulticlassSvm::from_json(&model.to_json()).unwrap();
        assert_eq!(back.machines, model.machines);
        assert_eq!(back.scaler, model.scaler);
        let mut broken = model;
        broken.machines.pop();
        assert!(MulticlassSvm::from_json(&broken.to_json()).is_err());
    }

    #[test]
    fn splits_are_seeded() {
        let s = model_splits(100, 5, 0.8, 7).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|(tr, te)| tr.len() == 80 && te.len() == 20));
        assert_ne!(s[0], s[1]);
        assert_eq!(s, model_splits(100, 5, 0.8, 7).unwrap());
    }
}
