//! Shared measurement types and the two binning schemes: latency bands for
//! round-trip times and delay states for individual traceroute hops.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of hop delays recorded per traceroute.
pub const MAX_HOPS: usize = 25;

/// Upper bound on any great-circle distance we accept (half circumference plus margin).
pub const MAX_DISTANCE_KM: f64 = 20_040.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::domain(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::domain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::domain(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Delay state of a single hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HopState {
    Low = 0,
    Avg = 1,
    High = 2,
    Spike = 3,
}

impl HopState {
    pub const ALL: [HopState; 4] = [HopState::Low, HopState::Avg, HopState::High, HopState::Spike];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<HopState> {
        HopState::ALL.get(i).copied()
    }
}

/// Bin edges for [`bin_hop_state`], in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopBinning {
    pub low_upper: f64,
    pub avg_upper: f64,
    pub spike_threshold: f64,
}

impl Default for HopBinning {
    fn default() -> Self {
        HopBinning { low_upper: 0.5, avg_upper: 2.0, spike_threshold: 15.0 }
    }
}

impl HopBinning {
    pub fn new(low_upper: f64, avg_upper: f64, spike_threshold: f64) -> Result<Self> {
        if !(low_upper > 0.0 && low_upper < avg_upper && avg_upper < spike_threshold)
            || !spike_threshold.is_finite()
        {
            return Err(Error::domain(format!(
                "hop bins must satisfy 0 < {low_upper} < {avg_upper} < {spike_threshold}"
            )));
        }
        Ok(HopBinning { low_upper, avg_upper, spike_threshold })
    }

    /// Same bins with a different spike threshold.
    pub fn with_spike_threshold(self, spike_threshold: f64) -> Result<Self> {
        HopBinning::new(self.low_upper, self.avg_upper, spike_threshold)
    }
}

/// Seven GPN latency bands, ordered fastest to slowest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeedLabel {
    Fastest = 1,
    Fast = 2,
    NormalFast = 3,
    NormalSlow = 4,
    Slow = 5,
    Slowest = 6,
    Unusable = 7,
}

impl SpeedLabel {
    pub const ALL: [SpeedLabel; 7] = [
        SpeedLabel::Fastest,
        SpeedLabel::Fast,
        SpeedLabel::NormalFast,
        SpeedLabel::NormalSlow,
        SpeedLabel::Slow,
        SpeedLabel::Slowest,
        SpeedLabel::Unusable,
    ];

    /// 1-based ordinal.
    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ord: u8) -> Option<SpeedLabel> {
        SpeedLabel::ALL.get((ord as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeedLabel::Fastest => "Fastest",
            SpeedLabel::Fast => "Fast",
            SpeedLabel::NormalFast => "NormalFast",
            SpeedLabel::NormalSlow => "NormalSlow",
            SpeedLabel::Slow => "Slow",
            SpeedLabel::Slowest => "Slowest",
            SpeedLabel::Unusable => "Unusable",
        }
    }

    /// RTT interval `(lower, upper]` in ms; the first band also includes 0 and
    /// the last band has no upper bound.
    pub fn bounds(self) -> (f64, f64) {
        let k = f64::from(self.ordinal() - 1);
        if self == SpeedLabel::Unusable {
            (180.0, f64::INFINITY)
        } else {
            (30.0 * k, 30.0 * (k + 1.0))
        }
    }
}

impl fmt::Display for SpeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Map a GPN round-trip time to its latency band.
///
/// Bands are closed above at 30, 60, ..., 180 ms so integer RTTs land exactly
/// where the published `0-30`, `31-60`, ... ranges put them.
pub fn bin_speed_label(rtt: f64) -> Result<SpeedLabel> {
    if !rtt.is_finite() || rtt < 0.0 {
        return Err(Error::domain(format!("invalid RTT {rtt}")));
    }
    let label = SpeedLabel::ALL
        .iter()
        .copied()
        .find(|l| rtt <= l.bounds().1)
        .unwrap_or(SpeedLabel::Unusable);
    Ok(label)
}

/// Map a hop delay to its state. Bins are half-open on the right.
pub fn bin_hop_state(delay: f64, binning: &HopBinning) -> Result<HopState> {
    if !delay.is_finite() || delay < 0.0 {
        return Err(Error::domain(format!("invalid hop delay {delay}")));
    }
    Ok(if delay < binning.low_upper {
        HopState::Low
    } else if delay < binning.avg_upper {
        HopState::Avg
    } else if delay < binning.spike_threshold {
        HopState::High
    } else {
        HopState::Spike
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerouteRecord {
    pub source_ip: String,
    pub source: GeoPoint,
    pub dest_ip: String,
    pub dest: GeoPoint,
    pub hops: Vec<f64>,
}

impl TracerouteRecord {
    pub fn new(
        source_ip: impl Into<String>,
        source: GeoPoint,
        dest_ip: impl Into<String>,
        dest: GeoPoint,
        hops: Vec<f64>,
    ) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::domain("traceroute has no hops"));
        }
        if hops.len() > MAX_HOPS {
            return Err(Error::domain(format!("{} hops exceeds {MAX_HOPS}", hops.len())));
        }
        if let Some(bad) = hops.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::domain(format!("invalid hop delay {bad}")));
        }
        Ok(TracerouteRecord {
            source_ip: source_ip.into(),
            source,
            dest_ip: dest_ip.into(),
            dest,
            hops,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RttRecord {
    /// Seconds since the Unix epoch (UTC).
    pub client_timestamp: i64,
    pub source_ip: String,
    pub source: GeoPoint,
    pub dest_ip: String,
    pub dest: GeoPoint,
    pub proxy1_name: String,
    pub proxy2_name: Option<String>,
    pub gpn_rtt: f64,
    pub non_gpn_rtt: f64,
}

impl RttRecord {
    pub fn validate(&self) -> Result<()> {
        if self.client_timestamp < 0 {
            return Err(Error::domain(format!("negative timestamp {}", self.client_timestamp)));
        }
        for (name, v) in [("gpn_rtt", self.gpn_rtt), ("non_gpn_rtt", self.non_gpn_rtt)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("invalid {name} {v}")));
            }
        }
        if self.proxy1_name.is_empty() {
            return Err(Error::domain("empty proxy1 name"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyRecord {
    pub name: String,
    pub ip: String,
    pub location: GeoPoint,
}

/// An RTT measurement joined with its proxy locations and path distances (km).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub rtt: RttRecord,
    pub proxy1: GeoPoint,
    pub proxy2: Option<GeoPoint>,
    pub dist_src_dst: f64,
    pub dist_src_p1: f64,
    /// Zero when there is no second proxy.
    pub dist_p1_p2: f64,
    /// Measured from proxy 1 when there is no second proxy.
    pub dist_p2_dst: f64,
}

impl MergedRecord {
    /// Location of the last proxy on the path.
    pub fn last_proxy(&self) -> GeoPoint {
        self.proxy2.unwrap_or(self.proxy1)
    }

    /// Source → proxy 1 → (proxy 2) → destination.
    pub fn path_km(&self) -> f64 {
        self.dist_src_p1 + self.dist_p1_p2 + self.dist_p2_dst
    }

    pub fn distances(&self) -> [f64; 4] {
        [self.dist_src_dst, self.dist_src_p1, self.dist_p1_p2, self.dist_p2_dst]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn speed_label_examples() {
        assert_eq!(bin_speed_label(25.0).unwrap(), SpeedLabel::Fastest);
        assert_eq!(bin_speed_label(0.0).unwrap(), SpeedLabel::Fastest);
        assert_eq!(bin_speed_label(181.0).unwrap(), SpeedLabel::Unusable);
        assert_eq!(bin_speed_label(90.0).unwrap(), SpeedLabel::NormalFast);
        assert_eq!(bin_speed_label(31.0).unwrap(), SpeedLabel::Fast);
        assert_eq!(bin_speed_label(180.0).unwrap(), SpeedLabel::Slowest);
        assert_eq!(bin_speed_label(100.0).unwrap(), SpeedLabel::NormalSlow);
    }

    #[test]
    fn speed_label_rejects_bad_input() {
        assert!(bin_speed_label(-0.1).is_err());
        assert!(bin_speed_label(f64::NAN).is_err());
        assert!(bin_speed_label(f64::INFINITY).is_err());
    }

    #[test]
    fn hop_state_examples() {
        let b = HopBinning::default();
        assert_eq!(bin_hop_state(0.3, &b).unwrap(), HopState::Low);
        assert_eq!(bin_hop_state(15.0, &b).unwrap(), HopState::Spike);
        assert_eq!(bin_hop_state(1.99, &b).unwrap(), HopState::Avg);
        assert_eq!(bin_hop_state(0.5, &b).unwrap(), HopState::Avg);
        assert_eq!(bin_hop_state(2.0, &b).unwrap(), HopState::High);
        assert!(bin_hop_state(-1.0, &b).is_err());
        assert!(bin_hop_state(f64::NAN, &b).is_err());
    }

    #[test]
    fn binning_validation() {
        assert!(HopBinning::new(0.5, 2.0, 15.0).is_ok());
        assert!(HopBinning::new(0.0, 2.0, 15.0).is_err());
        assert!(HopBinning::new(2.0, 2.0, 15.0).is_err());
        assert!(HopBinning::new(0.5, 20.0, 15.0).is_err());
    }

    #[test]
    fn label_midpoints_round_trip() {
        for l in SpeedLabel::ALL {
            let (lo, hi) = l.bounds();
            let mid = if hi.is_finite() { (lo + hi) / 2.0 } else { lo + 100.0 };
            assert_eq!(bin_speed_label(mid).unwrap(), l);
            assert_eq!(SpeedLabel::from_ordinal(l.ordinal()), Some(l));
        }
        assert_eq!(SpeedLabel::from_ordinal(0), None);
        assert_eq!(SpeedLabel::from_ordinal(8), None);
    }

    #[test]
    fn speed_boundaries_map_to_single_bin() {
        for k in 1..=6 {
            let edge = 30.0 * k as f64;
            let below = bin_speed_label(edge).unwrap();
            let above = bin_speed_label(f64::from_bits(edge.to_bits() + 1)).unwrap();
            assert_eq!(below.ordinal(), k as u8);
            assert_eq!(above.ordinal(), k as u8 + 1);
        }
    }

    #[test]
    fn hop_boundaries_map_to_single_bin() {
        let b = HopBinning::default();
        for (edge, state) in [(0.5_f64, HopState::Avg), (2.0, HopState::High), (15.0, HopState::Spike)] {
            let below = f64::from_bits(edge.to_bits() - 1);
            assert_eq!(bin_hop_state(edge, &b).unwrap(), state);
            assert_eq!(bin_hop_state(below, &b).unwrap().index(), state.index() - 1);
        }
    }

    #[test]
    fn traceroute_invariants() {
        let p = GeoPoint::new(0.0, 0.0).unwrap();
        assert!(TracerouteRecord::new("a", p, "b", p, vec![]).is_err());
        assert!(TracerouteRecord::new("a", p, "b", p, vec![1.0; 26]).is_err());
        assert!(TracerouteRecord::new("a", p, "b", p, vec![1.0, -2.0]).is_err());
        assert!(TracerouteRecord::new("a", p, "b", p, vec![1.0; 25]).is_ok());
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
    }

    proptest! {
        #[test]
        fn speed_label_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_speed_label(lo).unwrap() <= bin_speed_label(hi).unwrap());
        }

        #[test]
        fn hop_state_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let bins = HopBinning::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_hop_state(lo, &bins).unwrap() <= bin_hop_state(hi, &bins).unwrap());
        }
    }
}
