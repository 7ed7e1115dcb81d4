//! Four-state hop-delay Markov model: estimation from traceroutes, long-run
//! state distribution by power iteration, and next-hop spike prediction.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{bin_hop_state, HopBinning, HopState, TracerouteRecord};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

const N: usize = 4;

/// Row-stochastic 4×4 matrix; entry `(i, j)` is `P[next = j | current = i]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix([[f64; N]; N]);

impl TransitionMatrix {
    /// Rows must be probability vectors (sum 1 within 1e-9).
    pub fn new(rows: [[f64; N]; N]) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::domain(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(TransitionMatrix(rows))
    }

    /// Scale each row to sum to 1 (for rounded or count-valued input).
    pub fn from_weights(rows: [[f64; N]; N]) -> Result<Self> {
        let mut out = [[0.0; N]; N];
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::domain(format!("row {i} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::domain(format!("row {i} has zero total weight")));
            }
            for j in 0..N {
                out[i][j] = row[j] / s;
            }
        }
        Ok(TransitionMatrix(out))
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; N]; N];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        TransitionMatrix(m)
    }

    pub fn get(&self, from: HopState, to: HopState) -> f64 {
        self.0[from.index()][to.index()]
    }

    pub fn row(&self, from: HopState) -> &[f64; N] {
        &self.0[from.index()]
    }

    pub fn rows(&self) -> &[[f64; N]; N] {
        &self.0
    }

    /// `v · M` for a row vector `v`.
    pub fn left_mul(&self, v: &[f64; N]) -> [f64; N] {
        let mut out = [0.0; N];
        for (i, vi) in v.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(&self.0[i]) {
                *o += vi * m;
            }
        }
        out
    }

    /// Four lines of four comma-separated probabilities, six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.0 {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Inverse of [`to_csv`](Self::to_csv). Rows are renormalized to absorb rounding.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cells: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let cells = cells.map_err(|e| Error::Schema(format!("matrix cell: {e}")))?;
            if cells.len() != N {
                return Err(Error::Schema(format!("matrix row has {} cells, expected 4", cells.len())));
            }
            rows.push([cells[0], cells[1], cells[2], cells[3]]);
        }
        if rows.len() != N {
            return Err(Error::Schema(format!("matrix has {} rows, expected 4", rows.len())));
        }
        TransitionMatrix::from_weights([rows[0], rows[1], rows[2], rows[3]])
    }
}

/// Spike-prediction outcome counts over consecutive hop pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl SpikeConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(mut self, o: SpikeConfusion) -> Self {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PredictionRule {
    /// Most probable next state; ties go to the lowest state.
    Argmax,
    /// Spike iff `P[next = Spike | current] >= tau`.
    SpikeThreshold(f64),
}

impl Default for PredictionRule {
    fn default() -> Self {
        PredictionRule::SpikeThreshold(0.5)
    }
}

impl PredictionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PredictionRule::SpikeThreshold(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::domain(format!("spike threshold {t} is not a probability")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for PredictionRule {
    type Err = Error;

    /// `argmax` or `threshold:<tau>`.
    fn from_str(s: &str) -> Result<Self> {
        let rule = match s.trim() {
            "argmax" => PredictionRule::Argmax,
            other => {
                let tau = other
                    .strip_prefix("threshold:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::domain(format!("unknown rule {other:?}; use argmax or threshold:<tau>")))?;
                PredictionRule::SpikeThreshold(tau)
            }
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prediction {
    State(HopState),
    Spike(bool),
}

impl Prediction {
    pub fn is_spike(self) -> bool {
        match self {
            Prediction::State(s) => s == HopState::Spike,
            Prediction::Spike(b) => b,
        }
    }
}

pub fn to_state_sequences(traceroutes: &[TracerouteRecord], binning: &HopBinning) -> Result<Vec<Vec<HopState>>> {
    traceroutes
        .iter()
        .map(|t| t.hops.iter().map(|&d| bin_hop_state(d, binning)).collect())
        .collect()
}

fn count_transitions(seq: &[HopState]) -> [[u64; N]; N] {
    let mut c = [[0u64; N]; N];
    for w in seq.windows(2) {
        c[w[0].index()][w[1].index()] += 1;
    }
    c
}

/// Transition counts over all sequences.
pub fn transition_counts(sequences: &[Vec<HopState>], exec: Execution) -> [[u64; N]; N] {
    par::map(exec, sequences, |s| count_transitions(s)).into_iter().fold([[0; N]; N], |mut acc, c| {
        for i in 0..N {
            for j in 0..N {
                acc[i][j] += c[i][j];
            }
        }
        acc
    })
}

/// Maximum-likelihood transition matrix. States never left get a uniform row.
pub fn estimate_transitions(sequences: &[Vec<HopState>]) -> Result<TransitionMatrix> {
    estimate_transitions_with(sequences, Execution::default())
}

pub fn estimate_transitions_with(sequences: &[Vec<HopState>], exec: Execution) -> Result<TransitionMatrix> {
    let counts = transition_counts(sequences, exec);
    if counts.iter().flatten().all(|&c| c == 0) {
        return Err(Error::domain("no transitions: every sequence has fewer than two hops"));
    }
    let mut rows = [[0.25; N]; N];
    for (row, c) in rows.iter_mut().zip(&counts) {
        let total: u64 = c.iter().sum();
        if total > 0 {
            for (p, &k) in row.iter_mut().zip(c) {
                *p = k as f64 / total as f64;
            }
        }
    }
    TransitionMatrix::new(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions { tol: 1e-10, max_iter: 10_000 }
    }
}

/// Long-run state distribution: start uniform, multiply by `M` until the L1
/// change drops below `tol`.
pub fn stationary_distribution(m: &TransitionMatrix, opts: StationaryOptions) -> Result<[f64; N]> {
    let mut v = [0.25; N];
    for _ in 0..opts.max_iter {
        let next = m.left_mul(&v);
        let change: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if change < opts.tol {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|p| *p /= s);
            return Ok(v);
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, last: v })
}

pub fn predict_next(m: &TransitionMatrix, current: HopState, rule: PredictionRule) -> Prediction {
    let row = m.row(current);
    match rule {
        PredictionRule::Argmax => {
            let mut best = 0;
            for j in 1..N {
                if row[j] > row[best] {
                    best = j;
                }
            }
            Prediction::State(HopState::ALL[best])
        }
        PredictionRule::SpikeThreshold(tau) => Prediction::Spike(row[HopState::Spike.index()] >= tau),
    }
}

/// Score spike predictions on every consecutive hop pair of the test sequences.
pub fn evaluate_spikes(m: &TransitionMatrix, sequences: &[Vec<HopState>], rule: PredictionRule) -> SpikeConfusion {
    evaluate_spikes_with(m, sequences, rule, Execution::default())
}

pub fn evaluate_spikes_with(
    m: &TransitionMatrix,
    sequences: &[Vec<HopState>],
    rule: PredictionRule,
    exec: Execution,
) -> SpikeConfusion {
    let predicted: [bool; N] = HopState::ALL.map(|s| predict_next(m, s, rule).is_spike());
    par::map(exec, sequences, |seq| {
        let mut c = SpikeConfusion::default();
        for w in seq.windows(2) {
            let actual = w[1] == HopState::Spike;
            match (predicted[w[0].index()], actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    })
    .into_iter()
    .fold(SpikeConfusion::default(), SpikeConfusion::add)
}
