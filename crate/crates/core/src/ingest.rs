//! CSV ingestion for traceroute, RTT and proxy files, null removal, and the
//! merge that attaches proxy locations and path distances to RTT rows.
//!
//! Row-level problems never abort a parse: they are collected in a
//! [`RejectReport`]. Only I/O failures and missing header columns are fatal.
//!
//! Column layouts:
//!
//! * traceroute: `src_ip,src_lat,src_lon,dst_ip,dst_lat,dst_lon,hop1,...,hop25`
//! * RTT: `client_ts,src_ip,src_lat,src_lon,dst_ip,dst_lat,dst_lon,proxy1,proxy2,gpn_rtt,non_gpn_rtt`
//! * proxy: `name,ip,lat,lon`
//! * merged: RTT columns followed by
//!   `p1_lat,p1_lon,p2_lat,p2_lon,dist_src_dst,dist_src_p1,dist_p1_p2,dist_p2_dst`

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::domain::{GeoPoint, MergedRecord, ProxyRecord, RttRecord, TracerouteRecord, MAX_HOPS};
use crate::error::{Error, Result};
use crate::features::haversine_km;

pub const TRACEROUTE_ENDPOINT_COLUMNS: [&str; 6] =
    ["src_ip", "src_lat", "src_lon", "dst_ip", "dst_lat", "dst_lon"];

pub const RTT_COLUMNS: [&str; 11] = [
    "client_ts",
    "src_ip",
    "src_lat",
    "src_lon",
    "dst_ip",
    "dst_lat",
    "dst_lon",
    "proxy1",
    "proxy2",
    "gpn_rtt",
    "non_gpn_rtt",
];

pub const PROXY_COLUMNS: [&str; 4] = ["name", "ip", "lat", "lon"];

pub const MERGED_EXTRA_COLUMNS: [&str; 8] = [
    "p1_lat",
    "p1_lon",
    "p2_lat",
    "p2_lon",
    "dist_src_dst",
    "dist_src_p1",
    "dist_p1_p2",
    "dist_p2_dst",
];

/// One rejected input row. `line` is the 1-based line in the file
/// (header is line 1), or the record index for merge rejects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReport {
    pub rows_read: usize,
    pub rejected: Vec<Reject>,
    /// Traceroute rows with no hop values at all.
    pub dropped_empty: usize,
    /// Duplicate keys overwritten by a later row.
    pub duplicate_warnings: usize,
}

impl RejectReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len() + self.dropped_empty
    }

    fn reject(&mut self, line: u64, reason: impl Into<String>) {
        self.rejected.push(Reject { line, reason: reason.into() });
    }

    /// Rejects as `line,reason` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["line", "reason"])?;
        for r in &self.rejected {
            w.write_record([r.line.to_string(), r.reason.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub report: RejectReport,
}

/// Header name → column index, with required-column checking.
struct Header {
    index: BTreeMap<String, usize>,
}

impl Header {
    fn read<R: Read>(rdr: &mut csv::Reader<R>, required: &[&str]) -> Result<Self> {
        let index: BTreeMap<String, usize> = rdr
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let missing: Vec<&str> = required.iter().copied().filter(|c| !index.contains_key(*c)).collect();
        if !missing.is_empty() {
            return Err(Error::Schema(format!("missing columns: {}", missing.join(", "))));
        }
        Ok(Header { index })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: &str) -> Option<&'r str> {
        let raw = rec.get(*self.index.get(col)?)?.trim();
        (!raw.is_empty()).then_some(raw)
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(input)
}

fn parse_f64(col: &str, raw: &str) -> std::result::Result<f64, String> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("malformed number in {col}: {raw:?}")),
    }
}

/// Integer epoch seconds or `YYYY-MM-DDTHH:MM:SSZ`.
pub fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    if let Ok(ts) = raw.parse::<i64>() {
        return Ok(ts);
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%SZ")
        .map(|dt| dt.and_utc().timestamp())
        .map_err(|_| format!("malformed timestamp {raw:?}"))
}

fn opt_f64(h: &Header, rec: &csv::StringRecord, col: &str) -> std::result::Result<Option<f64>, String> {
    h.get(rec, col).map(|raw| parse_f64(col, raw)).transpose()
}

fn req_f64(h: &Header, rec: &csv::StringRecord, col: &str) -> std::result::Result<f64, String> {
    opt_f64(h, rec, col)?.ok_or_else(|| format!("null {col}"))
}

fn req_str(h: &Header, rec: &csv::StringRecord, col: &str) -> std::result::Result<String, String> {
    h.get(rec, col).map(str::to_owned).ok_or_else(|| format!("null {col}"))
}

fn geo(lat: f64, lon: f64) -> std::result::Result<GeoPoint, String> {
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn line_of(rec: &csv::StringRecord, fallback: u64) -> u64 {
    rec.position().map_or(fallback, |p| p.line())
}

pub fn parse_traceroute_csv<R: Read>(input: R) -> Result<Parsed<TracerouteRecord>> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr, &TRACEROUTE_ENDPOINT_COLUMNS)?;
    let hop_cols: Vec<String> = (1..=MAX_HOPS).map(|i| format!("hop{i}")).collect();
    if !header.index.contains_key("hop1") {
        return Err(Error::Schema("missing columns: hop1".into()));
    }
    let mut report = RejectReport::default();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let line = line_of(&rec, i as u64 + 2);
        let row = (|| -> std::result::Result<Option<TracerouteRecord>, String> {
            let mut hops = Vec::new();
            for col in &hop_cols {
                // the first empty hop cell ends the route
                match opt_f64(&header, &rec, col)? {
                    Some(v) => hops.push(v),
                    None => break,
                }
            }
            if hops.is_empty() {
                return Ok(None);
            }
            let source = geo(req_f64(&header, &rec, "src_lat")?, req_f64(&header, &rec, "src_lon")?)?;
            let dest = geo(req_f64(&header, &rec, "dst_lat")?, req_f64(&header, &rec, "dst_lon")?)?;
            TracerouteRecord::new(
                req_str(&header, &rec, "src_ip")?,
                source,
                req_str(&header, &rec, "dst_ip")?,
                dest,
                hops,
            )
            .map(Some)
            .map_err(|e| e.to_string())
        })();
        match row {
            Ok(Some(r)) => records.push(r),
            Ok(None) => report.dropped_empty += 1,
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok(Parsed { records, report })
}

pub fn write_traceroute_csv<W: Write>(records: &[TracerouteRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = TRACEROUTE_ENDPOINT_COLUMNS.iter().map(|s| s.to_string()).collect();
    head.extend((1..=MAX_HOPS).map(|i| format!("hop{i}")));
    w.write_record(&head)?;
    for r in records {
        let mut row = vec![
            r.source_ip.clone(),
            fmt6(r.source.lat),
            fmt6(r.source.lon),
            r.dest_ip.clone(),
            fmt6(r.dest.lat),
            fmt6(r.dest.lon),
        ];
        row.extend(r.hops.iter().map(|&h| fmt6(h)));
        row.resize(head.len(), String::new());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Records that may carry missing (null) fields.
pub trait Completeness {
    fn is_complete(&self) -> bool;
}

/// An RTT row as read, before null removal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawRttRow {
    pub line: u64,
    pub client_ts: Option<i64>,
    pub src_ip: Option<String>,
    pub src_lat: Option<f64>,
    pub src_lon: Option<f64>,
    pub dst_ip: Option<String>,
    pub dst_lat: Option<f64>,
    pub dst_lon: Option<f64>,
    pub proxy1: Option<String>,
    pub proxy2: Option<String>,
    pub gpn_rtt: Option<f64>,
    pub non_gpn_rtt: Option<f64>,
}

impl RawRttRow {
    fn first_null(&self) -> Option<&'static str> {
        [
            ("client_ts", self.client_ts.is_none()),
            ("src_ip", self.src_ip.is_none()),
            ("src_lat", self.src_lat.is_none()),
            ("src_lon", self.src_lon.is_none()),
            ("dst_ip", self.dst_ip.is_none()),
            ("dst_lat", self.dst_lat.is_none()),
            ("dst_lon", self.dst_lon.is_none()),
            ("proxy1", self.proxy1.is_none()),
            ("gpn_rtt", self.gpn_rtt.is_none()),
            ("non_gpn_rtt", self.non_gpn_rtt.is_none()),
        ]
        .into_iter()
        .find_map(|(name, missing)| missing.then_some(name))
    }

    /// Validated record; `None` fields must already have been removed.
    pub fn into_record(self) -> std::result::Result<RttRecord, String> {
        if let Some(col) = self.first_null() {
            return Err(format!("null {col}"));
        }
        let rec = RttRecord {
            client_timestamp: self.client_ts.unwrap_or_default(),
            source_ip: self.src_ip.unwrap_or_default(),
            source: geo(self.src_lat.unwrap_or_default(), self.src_lon.unwrap_or_default())?,
            dest_ip: self.dst_ip.unwrap_or_default(),
            dest: geo(self.dst_lat.unwrap_or_default(), self.dst_lon.unwrap_or_default())?,
            proxy1_name: self.proxy1.unwrap_or_default(),
            proxy2_name: self.proxy2,
            gpn_rtt: self.gpn_rtt.unwrap_or_default(),
            non_gpn_rtt: self.non_gpn_rtt.unwrap_or_default(),
        };
        rec.validate().map_err(|e| e.to_string())?;
        Ok(rec)
    }
}

impl Completeness for RawRttRow {
    fn is_complete(&self) -> bool {
        self.first_null().is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaOmit<T> {
    pub records: Vec<T>,
    pub removed: usize,
}

/// Drop every record with a missing required field, keeping order.
pub fn na_omit<T: Completeness>(records: Vec<T>) -> NaOmit<T> {
    let before = records.len();
    let records: Vec<T> = records.into_iter().filter(Completeness::is_complete).collect();
    NaOmit { removed: before - records.len(), records }
}

/// Read RTT rows keeping nulls; malformed values reject the row.
pub fn read_rtt_rows<R: Read>(input: R) -> Result<Parsed<RawRttRow>> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr, &RTT_COLUMNS)?;
    let mut report = RejectReport::default();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let line = line_of(&rec, i as u64 + 2);
        match raw_rtt_row(&header, &rec, line) {
            Ok(row) => records.push(row),
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok(Parsed { records, report })
}

fn raw_rtt_row(h: &Header, rec: &csv::StringRecord, line: u64) -> std::result::Result<RawRttRow, String> {
    let text = |c: &str| h.get(rec, c).map(str::to_owned);
    Ok(RawRttRow {
        line,
        client_ts: h.get(rec, "client_ts").map(parse_timestamp).transpose()?,
        src_ip: text("src_ip"),
        src_lat: opt_f64(h, rec, "src_lat")?,
        src_lon: opt_f64(h, rec, "src_lon")?,
        dst_ip: text("dst_ip"),
        dst_lat: opt_f64(h, rec, "dst_lat")?,
        dst_lon: opt_f64(h, rec, "dst_lon")?,
        proxy1: text("proxy1"),
        proxy2: text("proxy2"),
        gpn_rtt: opt_f64(h, rec, "gpn_rtt")?,
        non_gpn_rtt: opt_f64(h, rec, "non_gpn_rtt")?,
    })
}

/// Parse, drop rows with nulls, and validate. Null rows are reported as rejects.
pub fn parse_rtt_csv<R: Read>(input: R) -> Result<Parsed<RttRecord>> {
    let Parsed { records: raw, mut report } = read_rtt_rows(input)?;
    let mut records = Vec::with_capacity(raw.len());
    for row in raw {
        let line = row.line;
        match row.into_record() {
            Ok(r) => records.push(r),
            Err(reason) => report.reject(line, reason),
        }
    }
    report.rejected.sort_by_key(|r| r.line);
    Ok(Parsed { records, report })
}

pub fn write_rtt_csv<W: Write>(records: &[RttRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RTT_COLUMNS)?;
    for r in records {
        w.write_record(rtt_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

fn rtt_fields(r: &RttRecord) -> Vec<String> {
    vec![
        r.client_timestamp.to_string(),
        r.source_ip.clone(),
        fmt6(r.source.lat),
        fmt6(r.source.lon),
        r.dest_ip.clone(),
        fmt6(r.dest.lat),
        fmt6(r.dest.lon),
        r.proxy1_name.clone(),
        r.proxy2_name.clone().unwrap_or_default(),
        fmt6(r.gpn_rtt),
        fmt6(r.non_gpn_rtt),
    ]
}

/// Proxies keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProxyTable {
    pub proxies: BTreeMap<String, ProxyRecord>,
}

impl ProxyTable {
    pub fn get(&self, name: &str) -> Option<&ProxyRecord> {
        self.proxies.get(name)
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    /// Insert, returning true when an existing entry was replaced.
    pub fn insert(&mut self, p: ProxyRecord) -> bool {
        self.proxies.insert(p.name.clone(), p).is_some()
    }
}

/// Parse a proxy table. Duplicate names: the last row wins and a warning is counted.
pub fn parse_proxy_csv<R: Read>(input: R) -> Result<(ProxyTable, RejectReport)> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr, &PROXY_COLUMNS)?;
    let mut report = RejectReport::default();
    let mut table = ProxyTable::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let line = line_of(&rec, i as u64 + 2);
        let row = (|| -> std::result::Result<ProxyRecord, String> {
            Ok(ProxyRecord {
                name: req_str(&header, &rec, "name")?,
                ip: req_str(&header, &rec, "ip")?,
                location: geo(req_f64(&header, &rec, "lat")?, req_f64(&header, &rec, "lon")?)?,
            })
        })();
        match row {
            Ok(p) => {
                if table.insert(p) {
                    report.duplicate_warnings += 1;
                }
            }
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok((table, report))
}

pub fn write_proxy_csv<W: Write>(table: &ProxyTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROXY_COLUMNS)?;
    for p in table.proxies.values() {
        w.write_record([p.name.clone(), p.ip.clone(), fmt6(p.location.lat), fmt6(p.location.lon)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceCount {
    pub path: String,
    pub rows_before: usize,
    pub rows_after: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<SourceCount>,
    /// Records dropped by the merge (unknown proxy names).
    pub merge_rejects: Vec<Reject>,
}

/// Merged measurement records plus where they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<MergedRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Attach proxy coordinates and the four path distances to each RTT record.
/// Records naming an unknown proxy are rejected (index recorded as `line`).
pub fn merge(rtt_records: &[RttRecord], proxies: &ProxyTable) -> Dataset {
    let mut ds = Dataset::default();
    for (i, r) in rtt_records.iter().enumerate() {
        match merge_one(r, proxies) {
            Ok(m) => ds.records.push(m),
            Err(reason) => ds.provenance.merge_rejects.push(Reject { line: i as u64, reason }),
        }
    }
    ds
}

pub fn merge_one(r: &RttRecord, proxies: &ProxyTable) -> std::result::Result<MergedRecord, String> {
    let p1 = proxies
        .get(&r.proxy1_name)
        .ok_or_else(|| format!("unknown proxy {:?}", r.proxy1_name))?
        .location;
    let p2 = match &r.proxy2_name {
        Some(name) => Some(proxies.get(name).ok_or_else(|| format!("unknown proxy {name:?}"))?.location),
        None => None,
    };
    let last = p2.unwrap_or(p1);
    Ok(MergedRecord {
        rtt: r.clone(),
        proxy1: p1,
        proxy2: p2,
        dist_src_dst: haversine_km(r.source, r.dest),
        dist_src_p1: haversine_km(r.source, p1),
        dist_p1_p2: p2.map_or(0.0, |p2| haversine_km(p1, p2)),
        dist_p2_dst: haversine_km(last, r.dest),
    })
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn merged_columns() -> Vec<&'static str> {
    RTT_COLUMNS.iter().chain(MERGED_EXTRA_COLUMNS.iter()).copied().collect()
}

/// Numbers are written with six decimals; timestamps as epoch seconds.
pub fn write_merged_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(merged_columns())?;
    for m in &ds.records {
        let mut row = rtt_fields(&m.rtt);
        row.push(fmt6(m.proxy1.lat));
        row.push(fmt6(m.proxy1.lon));
        row.push(m.proxy2.map(|p| fmt6(p.lat)).unwrap_or_default());
        row.push(m.proxy2.map(|p| fmt6(p.lon)).unwrap_or_default());
        row.extend(m.distances().iter().map(|&d| fmt6(d)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a merged file. Distances are taken as written, not recomputed.
pub fn read_merged_csv<R: Read>(input: R) -> Result<Parsed<MergedRecord>> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr, &merged_columns())?;
    let mut report = RejectReport::default();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let line = line_of(&rec, i as u64 + 2);
        let row = (|| -> std::result::Result<MergedRecord, String> {
            let rtt = raw_rtt_row(&header, &rec, line)?.into_record()?;
            let proxy1 = geo(req_f64(&header, &rec, "p1_lat")?, req_f64(&header, &rec, "p1_lon")?)?;
            let proxy2 = match (opt_f64(&header, &rec, "p2_lat")?, opt_f64(&header, &rec, "p2_lon")?) {
                (Some(lat), Some(lon)) => Some(geo(lat, lon)?),
                (None, None) => None,
                _ => return Err("proxy2 coordinates half missing".into()),
            };
            if proxy2.is_some() != rtt.proxy2_name.is_some() {
                return Err("proxy2 name and coordinates disagree".into());
            }
            let mut d = [0.0; 4];
            for (slot, col) in d.iter_mut().zip(&MERGED_EXTRA_COLUMNS[4..]) {
                *slot = req_f64(&header, &rec, col)?;
                if !(0.0..=crate::domain::MAX_DISTANCE_KM).contains(slot) {
                    return Err(format!("{col} out of range: {slot}"));
                }
            }
            Ok(MergedRecord {
                rtt,
                proxy1,
                proxy2,
                dist_src_dst: d[0],
                dist_src_p1: d[1],
                dist_p1_p2: d[2],
                dist_p2_dst: d[3],
            })
        })();
        match row {
            Ok(m) => records.push(m),
            Err(reason) => report.reject(line, reason),
        }
    }
    Ok(Parsed { records, report })
}
