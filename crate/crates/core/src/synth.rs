//! Seeded synthetic data: hop-state sequences drawn from the published
//! transition matrices, hop delays consistent with the state bins, and RTT
//! datasets from a known generative model.
//!
//! Every work item (route, record) draws from its own ChaCha stream, so
//! output depends only on `(params, seed)` and never on thread scheduling.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{bin_hop_state, GeoPoint, HopBinning, HopState, ProxyRecord, RttRecord, TracerouteRecord, MAX_HOPS};
use crate::error::{Error, Result};
use crate::features::SECONDS_IN_DAY;
use crate::ingest::{merge, Dataset, ProxyTable, SourceCount};
use crate::markov::{stationary_distribution, StationaryOptions, TransitionMatrix};
use crate::par::{self, Execution};
use crate::split::stream_rng;

/// Published GPN transition percentages (rows: from Low, Avg, High, Spike).
pub const GPN_PERCENT: [[f64; 4]; 4] = [
    [49.6, 50.1, 0.0, 0.1],
    [50.7, 49.2, 0.0, 0.0],
    [33.3, 7.5, 29.0, 30.1],
    [21.4, 4.0, 20.8, 53.6],
];

/// Published non-GPN transition percentages. The printed table has five
/// rows; its first row repeats the GPN matrix and is dropped here.
pub const NON_GPN_PERCENT: [[f64; 4]; 4] = [
    [70.2, 9.7, 12.2, 7.7],
    [54.7, 11.9, 21.4, 11.9],
    [52.1, 26.0, 18.4, 3.2],
    [66.6, 11.1, 7.4, 14.8],
];

/// GPN matrix, rows renormalized to sum to 1.
pub fn gpn_matrix() -> TransitionMatrix {
    TransitionMatrix::from_weights(GPN_PERCENT).expect("constant rows are positive")
}

/// Non-GPN matrix, rows renormalized to sum to 1.
pub fn non_gpn_matrix() -> TransitionMatrix {
    TransitionMatrix::from_weights(NON_GPN_PERCENT).expect("constant rows are positive")
}

/// Resolve `gpn_paper` / `nongpn_paper`.
pub fn named_matrix(name: &str) -> Option<TransitionMatrix> {
    match name {
        "gpn_paper" | "gpn" => Some(gpn_matrix()),
        "nongpn_paper" | "non_gpn_paper" | "nongpn" => Some(non_gpn_matrix()),
        _ => None,
    }
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64; 4]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(3)
}

/// Random hop-state routes. The first state is drawn from the chain's
/// stationary distribution; lengths are uniform on `mean_len ± 3`, clipped to `[2, 25]`.
pub fn gen_state_sequences(m: &TransitionMatrix, n_routes: usize, mean_len: usize, seed: u64) -> Result<Vec<Vec<HopState>>> {
    gen_state_sequences_with(m, n_routes, mean_len, seed, Execution::default())
}

pub fn gen_state_sequences_with(
    m: &TransitionMatrix,
    n_routes: usize,
    mean_len: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<HopState>>> {
    if mean_len < 2 {
        return Err(Error::domain(format!("mean route length {mean_len} < 2")));
    }
    let start = stationary_distribution(m, StationaryOptions::default())?;
    let lo = mean_len.saturating_sub(3).clamp(2, MAX_HOPS);
    let hi = (mean_len + 3).clamp(2, MAX_HOPS);
    Ok(par::map_range(exec, n_routes, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let len = rng.random_range(lo..=hi);
        let mut s = sample_index(&mut rng, &start);
        let mut seq = Vec::with_capacity(len);
        seq.push(HopState::ALL[s]);
        for _ in 1..len {
            s = sample_index(&mut rng, &m.rows()[s]);
            seq.push(HopState::ALL[s]);
        }
        seq
    }))
}

/// Fraction of all hops in Spike state.
pub fn spike_fraction(sequences: &[Vec<HopState>]) -> f64 {
    let total: usize = sequences.iter().map(Vec::len).sum();
    let spikes = sequences.iter().flatten().filter(|&&s| s == HopState::Spike).count();
    if total == 0 { 0.0 } else { spikes as f64 / total as f64 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayRange {
    pub lo: f64,
    pub hi: f64,
    /// Whether `hi` itself can be drawn.
    pub closed: bool,
}

impl DelayRange {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.closed {
            rng.random_range(self.lo..=self.hi)
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }

    fn largest(&self) -> f64 {
        if self.closed { self.hi } else { f64::from_bits(self.hi.to_bits() - 1) }
    }
}

/// Per-state delay ranges (ms) for turning states back into delays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaySampler {
    pub ranges: [DelayRange; 4],
}

impl DelaySampler {
    fn with_spike(lo: f64, hi: f64) -> Self {
        let open = |lo, hi| DelayRange { lo, hi, closed: false };
        DelaySampler {
            ranges: [open(0.0, 0.5), open(0.5, 2.0), open(2.0, 15.0), DelayRange { lo, hi, closed: true }],
        }
    }

    /// GPN spikes: 61–160 ms.
    pub fn gpn() -> Self {
        DelaySampler::with_spike(61.0, 160.0)
    }

    /// Non-GPN spikes: 19–105 ms.
    pub fn non_gpn() -> Self {
        DelaySampler::with_spike(19.0, 105.0)
    }

    /// Every range must bin back to its own state.
    pub fn validate(&self, binning: &HopBinning) -> Result<()> {
        for (state, r) in HopState::ALL.iter().zip(&self.ranges) {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo >= 0.0 && r.lo < r.hi) {
                return Err(Error::domain(format!("bad delay range {r:?} for {state:?}")));
            }
            for edge in [r.lo, r.largest()] {
                if bin_hop_state(edge, binning)? != *state {
                    return Err(Error::domain(format!(
                        "delay range {:?} for {state:?} leaves its bin at {edge}",
                        (r.lo, r.hi)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Turn state sequences into traceroute records with synthetic endpoints.
pub fn states_to_delays(
    sequences: &[Vec<HopState>],
    sampler: &DelaySampler,
    binning: &HopBinning,
    seed: u64,
) -> Result<Vec<TracerouteRecord>> {
    sampler.validate(binning)?;
    let box_ = GeoBox::default();
    par::map_range(Execution::default(), sequences.len(), |r| {
        let mut rng = stream_rng(seed, r as u64);
        let hops: Vec<f64> = sequences[r].iter().map(|s| sampler.ranges[s.index()].sample(&mut rng)).collect();
        let src = box_.sample(&mut rng);
        let dst = box_.sample(&mut rng);
        TracerouteRecord::new(
            format!("10.{}.{}.{}", (r >> 16) & 255, (r >> 8) & 255, r & 255),
            src,
            format!("198.51.{}.{}", (r >> 8) & 255, r & 255),
            dst,
            hops,
        )
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for GeoBox {
    /// Roughly the contiguous United States and southern Canada.
    fn default() -> Self {
        GeoBox { lat_min: 25.0, lat_max: 55.0, lon_min: -125.0, lon_max: -70.0 }
    }
}

impl GeoBox {
    fn sample<R: Rng>(&self, rng: &mut R) -> GeoPoint {
        let lat = rng.random_range(self.lat_min..=self.lat_max);
        let lon = rng.random_range(self.lon_min..=self.lon_max);
        // Round to the precision the CSV files carry.
        GeoPoint::new(round6(lat), round6(lon)).expect("box lies inside valid coordinates")
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lat_min.is_finite()
            && self.lon_min.is_finite()
            && -90.0 <= self.lat_min
            && self.lat_min <= self.lat_max
            && self.lat_max <= 90.0
            && -180.0 <= self.lon_min
            && self.lon_min <= self.lon_max
            && self.lon_max <= 180.0;
        if ok { Ok(()) } else { Err(Error::domain(format!("invalid geobox {self:?}"))) }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Generative model for RTT datasets:
/// `gpn = base + km_coeff * path_km + diurnal_amp * cos(2πt/86400) + N(0, σ)`,
/// clipped at 0, and `non_gpn = gpn + U(non_gpn_offset)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RttGenModel {
    pub base_ms: f64,
    pub km_coeff: f64,
    pub diurnal_amp: f64,
    pub noise_sigma: f64,
    pub geobox: GeoBox,
    pub n_sources: usize,
    pub n_dests: usize,
    pub n_proxies: usize,
    /// Probability that a record routes through a second proxy.
    pub two_proxy_prob: f64,
    pub non_gpn_offset: (f64, f64),
    /// Start of the timestamp window (epoch seconds) and its length.
    pub start_ts: i64,
    pub window_secs: i64,
    pub seed: u64,
}

impl Default for RttGenModel {
    fn default() -> Self {
        RttGenModel {
            base_ms: 10.0,
            km_coeff: 0.02,
            diurnal_amp: 10.0,
            noise_sigma: 10.0,
            geobox: GeoBox::default(),
            n_sources: 108,
            n_dests: 214,
            n_proxies: 24,
            two_proxy_prob: 0.5,
            non_gpn_offset: (5.0, 60.0),
            start_ts: 1_583_107_200,
            window_secs: 7 * SECONDS_IN_DAY,
            seed: 0,
        }
    }
}

impl RttGenModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.base_ms, self.km_coeff, self.diurnal_amp, self.noise_sigma, self.non_gpn_offset.0, self.non_gpn_offset.1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("generator parameters must be finite"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::domain("noise sigma must be non-negative"));
        }
        if self.n_sources == 0 || self.n_dests == 0 || self.n_proxies < 2 {
            return Err(Error::domain("need at least one source, one destination and two proxies"));
        }
        if !(0.0..=1.0).contains(&self.two_proxy_prob) {
            return Err(Error::domain("two_proxy_prob must be a probability"));
        }
        let (lo, hi) = self.non_gpn_offset;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::domain("non-GPN offset range must be positive"));
        }
        if self.start_ts < 0 || self.window_secs <= 0 {
            return Err(Error::domain("timestamp window must be non-negative and non-empty"));
        }
        self.geobox.validate()
    }

    /// Noise-free GPN RTT for a merged record, before clipping.
    pub fn expected_rtt(&self, rec: &crate::domain::MergedRecord) -> f64 {
        self.base_ms
            + self.km_coeff * rec.path_km()
            + self.diurnal_amp * crate::features::encode_time_of_day(rec.rtt.client_timestamp)
    }
}

/// A generated dataset together with its raw inputs and the true parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRtt {
    pub rtt_records: Vec<RttRecord>,
    pub proxies: ProxyTable,
    pub dataset: Dataset,
    pub truth: RttGenModel,
}

struct Endpoint {
    ip: String,
    loc: GeoPoint,
}

pub fn gen_rtt_dataset(model: &RttGenModel, n: usize) -> Result<SynthRtt> {
    model.validate()?;
    if n == 0 {
        return Err(Error::domain("need at least one record"));
    }
    let mut pool_rng = stream_rng(model.seed, 0);
    let mut pool = |count: usize, ip: &dyn Fn(usize) -> String| -> Vec<Endpoint> {
        (0..count).map(|i| Endpoint { ip: ip(i), loc: model.geobox.sample(&mut pool_rng) }).collect()
    };
    let sources = pool(model.n_sources, &|i| format!("10.1.{}.{}", i / 256, i % 256));
    let dests = pool(model.n_dests, &|i| format!("203.0.{}.{}", i / 256, i % 256));
    let proxy_pool = pool(model.n_proxies, &|i| format!("172.16.{}.{}", i / 256, i % 256));
    let mut proxies = ProxyTable::default();
    for (i, p) in proxy_pool.iter().enumerate() {
        proxies.insert(ProxyRecord { name: format!("proxy-{i:03}"), ip: p.ip.clone(), location: p.loc });
    }
    let noise = Normal::new(0.0, model.noise_sigma).map_err(|e| Error::domain(e.to_string()))?;

    let rows: Vec<RttRecord> = par::map_range(Execution::default(), n, |i| {
        let mut rng = stream_rng(model.seed, i as u64 + 1);
        let src = &sources[rng.random_range(0..sources.len())];
        let dst = &dests[rng.random_range(0..dests.len())];
        let p1 = rng.random_range(0..model.n_proxies);
        let p2 = if rng.random_bool(model.two_proxy_prob) {
            // any proxy other than p1
            let k = rng.random_range(0..model.n_proxies - 1);
            Some(if k >= p1 { k + 1 } else { k })
        } else {
            None
        };
        RttRecord {
            client_timestamp: model.start_ts + rng.random_range(0..model.window_secs),
            source_ip: src.ip.clone(),
            source: src.loc,
            dest_ip: dst.ip.clone(),
            dest: dst.loc,
            proxy1_name: format!("proxy-{p1:03}"),
            proxy2_name: p2.map(|k| format!("proxy-{k:03}")),
            gpn_rtt: 0.0,
            non_gpn_rtt: 0.0,
        }
    });
    // distances as computed by ingestion
    let mut dataset = merge(&rows, &proxies);
    debug_assert!(dataset.provenance.merge_rejects.is_empty());
    let rtts: Vec<(f64, f64)> = par::map_range(Execution::default(), n, |i| {
        let mut rng = stream_rng(model.seed ^ 0x5e_ed0f_7e57, i as u64);
        let rec = &dataset.records[i];
        let eps = if model.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let gpn = round6((model.expected_rtt(rec) + eps).max(0.0));
        let offset = rng.random_range(model.non_gpn_offset.0..=model.non_gpn_offset.1);
        (gpn, round6(gpn + offset))
    });
    let mut rtt_records = rows;
    for ((rec, raw), (gpn, non_gpn)) in dataset.records.iter_mut().zip(rtt_records.iter_mut()).zip(rtts) {
        rec.rtt.gpn_rtt = gpn;
        rec.rtt.non_gpn_rtt = non_gpn;
        raw.gpn_rtt = gpn;
        raw.non_gpn_rtt = non_gpn;
    }
    dataset.provenance.sources.push(SourceCount {
        path: format!("synthetic:seed={}", model.seed),
        rows_before: n,
        rows_after: n,
    });
    Ok(SynthRtt { rtt_records, proxies, dataset, truth: model.clone() })
}
