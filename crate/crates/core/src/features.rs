//! Feature engineering: cyclical time encoding, great-circle distances,
//! categorical codes, standardization and model-specific matrix assembly.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::{bin_speed_label, GeoPoint, SpeedLabel};
use crate::error::{Error, Result};
use crate::ingest::Dataset;

pub const SECONDS_IN_DAY: i64 = 24 * 60 * 60;

/// Mean earth radius used for all distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Cosine of the time of day: 1 at midnight, -1 at noon.
pub fn encode_time_of_day(ts: i64) -> f64 {
    let secs = ts.rem_euclid(SECONDS_IN_DAY) as f64;
    (2.0 * PI * secs / SECONDS_IN_DAY as f64).cos()
}

/// Sine companion to [`encode_time_of_day`]; disambiguates AM from PM.
pub fn encode_time_of_day_sin(ts: i64) -> f64 {
    let secs = ts.rem_euclid(SECONDS_IN_DAY) as f64;
    (2.0 * PI * secs / SECONDS_IN_DAY as f64).sin()
}

/// Great-circle distance on a spherical earth.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Integer codes for a categorical column, assigned 1..k in first-appearance order.
/// Code 0 is reserved for values never seen while fitting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeTable {
    values: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl CodeTable {
    pub fn fit<S: AsRef<str>>(values: &[S]) -> Self {
        let mut table = CodeTable::default();
        for v in values {
            table.insert(v.as_ref());
        }
        table
    }

    fn insert(&mut self, value: &str) -> u32 {
        if let Some(&c) = self.index.get(value) {
            return c;
        }
        self.values.push(value.to_owned());
        let code = self.values.len() as u32;
        self.index.insert(value.to_owned(), code);
        code
    }

    pub fn code(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

pub fn encode_categorical<S: AsRef<str>>(values: &[S]) -> (Vec<u32>, CodeTable) {
    let table = CodeTable::fit(values);
    let codes = values.iter().map(|v| table.code(v.as_ref())).collect();
    (codes, table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Rtt(Vec<f64>),
    Label(Vec<SpeedLabel>),
}

impl Target {
    fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Rtt(v) => Target::Rtt(rows.iter().map(|&i| v[i]).collect()),
            Target::Label(v) => Target::Label(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    fn len(&self) -> usize {
        match self {
            Target::Rtt(v) => v.len(),
            Target::Label(v) => v.len(),
        }
    }
}

/// Dense row-major feature matrix with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<String>,
    data: Vec<f64>,
    target: Option<Target>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, data: Vec<f64>, target: Option<Target>) -> Result<Self> {
        let n_cols = columns.len();
        if n_cols == 0 {
            return Err(Error::domain("feature matrix needs at least one column"));
        }
        if !data.len().is_multiple_of(n_cols) {
            return Err(Error::DimensionMismatch { expected: n_cols, got: data.len() % n_cols });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite feature value {bad}")));
        }
        let n_rows = data.len() / n_cols;
        if let Some(t) = &target {
            if t.len() != n_rows {
                return Err(Error::DimensionMismatch { expected: n_rows, got: t.len() });
            }
        }
        Ok(FeatureMatrix { n_rows, columns, data, target })
    }

    /// Build from rows; every row must have `columns.len()` entries.
    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>], target: Option<Target>) -> Result<Self> {
        let n_cols = columns.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch { expected: n_cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(columns, data, target)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn target(&self) -> Option<&Target> {
        self.target.as_ref()
    }

    pub fn rtt_target(&self) -> Option<&[f64]> {
        match &self.target {
            Some(Target::Rtt(v)) => Some(v),
            _ => None,
        }
    }

    pub fn label_target(&self) -> Option<&[SpeedLabel]> {
        match &self.target {
            Some(Target::Label(v)) => Some(v),
            _ => None,
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Subset of rows (and their targets) in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            columns: self.columns.clone(),
            data,
            target: self.target.as_ref().map(|t| t.select(rows)),
        }
    }

    /// Same features, different target.
    pub fn with_target(mut self, target: Option<Target>) -> Result<Self> {
        if let Some(t) = &target {
            if t.len() != self.n_rows {
                return Err(Error::DimensionMismatch { expected: self.n_rows, got: t.len() });
            }
        }
        self.target = target;
        Ok(self)
    }
}

/// Per-column standardization parameters (population std, ddof = 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.transform_in_place(&mut out);
        out
    }

    pub fn transform_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_scaler(train: &FeatureMatrix) -> Result<ScalerParams> {
    if train.n_rows() == 0 {
        return Err(Error::domain("cannot fit a scaler on an empty matrix"));
    }
    let n = train.n_rows() as f64;
    let c = train.n_cols();
    let mut mean = vec![0.0; c];
    for r in train.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for r in train.rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n).sqrt();
            // constant column
            if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 }
        })
        .collect();
    Ok(ScalerParams { mean, std })
}

pub fn apply_scaler(params: &ScalerParams, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if params.dim() != m.n_cols() {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: m.n_cols() });
    }
    let mut out = m.clone();
    for row in out.data.chunks_exact_mut(params.dim()) {
        params.transform_in_place(row);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TimeEncoding {
    /// Add a `time_sin` column next to the cosine.
    pub include_sine: bool,
}

pub fn nn_feature_names(enc: TimeEncoding) -> Vec<String> {
    let mut cols = vec!["time_cos".to_string()];
    if enc.include_sine {
        cols.push("time_sin".into());
    }
    for c in ["src_lat", "src_lon", "dst_lat", "dst_lon", "p1_lat", "p1_lon", "p2_lat", "p2_lon"] {
        cols.push(c.into());
    }
    cols
}

/// Regression features: encoded time plus all endpoint and proxy coordinates.
/// A missing second proxy takes the first proxy's coordinates.
pub fn assemble_nn_features(ds: &Dataset, enc: TimeEncoding) -> Result<FeatureMatrix> {
    let columns = nn_feature_names(enc);
    let mut data = Vec::with_capacity(ds.records.len() * columns.len());
    let mut target = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        data.push(encode_time_of_day(r.rtt.client_timestamp));
        if enc.include_sine {
            data.push(encode_time_of_day_sin(r.rtt.client_timestamp));
        }
        let p2 = r.last_proxy();
        data.extend_from_slice(&[
            r.rtt.source.lat,
            r.rtt.source.lon,
            r.rtt.dest.lat,
            r.rtt.dest.lon,
            r.proxy1.lat,
            r.proxy1.lon,
            p2.lat,
            p2.lon,
        ]);
        target.push(r.rtt.gpn_rtt);
    }
    FeatureMatrix::new(columns, data, Some(Target::Rtt(target)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SvmFeatureOptions {
    pub time: TimeEncoding,
    /// Include integer codes for source/destination IPs and proxy names.
    pub categorical: bool,
}

impl Default for SvmFeatureOptions {
    fn default() -> Self {
        SvmFeatureOptions { time: TimeEncoding::default(), categorical: true }
    }
}

/// Classification features: every merged column except the GPN RTT, which
/// becomes the latency-band target.
pub fn assemble_svm_features(ds: &Dataset, opts: SvmFeatureOptions) -> Result<FeatureMatrix> {
    let mut columns = vec!["non_gpn_rtt".to_string()];
    columns.extend(nn_feature_names(opts.time));
    for c in ["dist_src_dst", "dist_src_p1", "dist_p1_p2", "dist_p2_dst"] {
        columns.push(c.into());
    }
    let (mut src, mut dst, mut p1, mut p2) = Default::default();
    if opts.categorical {
        for c in ["src_ip_code", "dst_ip_code", "proxy1_code", "proxy2_code"] {
            columns.push(c.into());
        }
        let recs = &ds.records;
        src = CodeTable::fit(&recs.iter().map(|r| r.rtt.source_ip.as_str()).collect::<Vec<_>>());
        dst = CodeTable::fit(&recs.iter().map(|r| r.rtt.dest_ip.as_str()).collect::<Vec<_>>());
        p1 = CodeTable::fit(&recs.iter().map(|r| r.rtt.proxy1_name.as_str()).collect::<Vec<_>>());
        p2 = CodeTable::fit(
            &recs.iter().filter_map(|r| r.rtt.proxy2_name.as_deref()).collect::<Vec<_>>(),
        );
    }
    let nn = assemble_nn_features(ds, opts.time)?;
    let mut data = Vec::with_capacity(ds.records.len() * columns.len());
    let mut labels = Vec::with_capacity(ds.records.len());
    for (r, nn_row) in ds.records.iter().zip(nn.rows()) {
        data.push(r.rtt.non_gpn_rtt);
        data.extend_from_slice(nn_row);
        data.extend_from_slice(&r.distances());
        if opts.categorical {
            data.push(f64::from(src.code(&r.rtt.source_ip)));
            data.push(f64::from(dst.code(&r.rtt.dest_ip)));
            data.push(f64::from(p1.code(&r.rtt.proxy1_name)));
            data.push(f64::from(r.rtt.proxy2_name.as_deref().map_or(0, |n| p2.code(n))));
        }
        labels.push(bin_speed_label(r.rtt.gpn_rtt)?);
    }
    FeatureMatrix::new(columns, data, Some(Target::Label(labels)))
}
