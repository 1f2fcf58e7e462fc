//! Per-bucket figures of merit and their aggregation over seeds.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::config::{ProtocolKind, ScenarioConfig};
use crate::sim::engine::run;
use crate::sim::log::EventLog;

/// Traffic and energy of all sources in one distance bucket of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketTotals {
    pub sources: u32,
    pub generated: u64,
    pub delivered: u64,
    pub delivered_bits: u64,
    /// Data plus control energy attributed to the bucket's flows.
    pub energy_j: f64,
}

impl BucketTotals {
    /// Joules per delivered bit, or `None` when nothing was delivered.
    pub fn energy_per_bit(&self) -> Option<f64> {
        (self.delivered_bits > 0).then(|| self.energy_j / self.delivered_bits as f64)
    }

    /// Delivered over generated packets, or `None` when nothing was
    /// generated.
    pub fn delivery_ratio(&self) -> Option<f64> {
        (self.generated > 0).then(|| self.delivered as f64 / self.generated as f64)
    }

    pub fn throughput_bps(&self, sim_time_s: f64) -> f64 {
        self.delivered_bits as f64 / sim_time_s
    }
}

/// Sums the flow summaries of a finished run by bucket.
pub fn bucket_totals(log: &EventLog) -> BTreeMap<u32, BucketTotals> {
    let mut out: BTreeMap<u32, BucketTotals> = BTreeMap::new();
    for f in log.flows() {
        let b = out.entry(f.bucket).or_default();
        b.sources += 1;
        b.generated += f.generated;
        b.delivered += f.delivered;
        b.delivered_bits += f.delivered_bits;
        b.energy_j += f.energy_j();
    }
    out
}

fn totals(log: &EventLog, bucket: u32) -> BucketTotals {
    bucket_totals(log).remove(&bucket).unwrap_or_default()
}

fn sim_time(log: &EventLog) -> Result<f64> {
    log.run_info()
        .map(|(_, _, t)| t)
        .ok_or_else(|| Error::Log("log has no run_info record".into()))
}

pub fn energy_per_bit(log: &EventLog, bucket: u32) -> Option<f64> {
    totals(log, bucket).energy_per_bit()
}

pub fn delivery_ratio(log: &EventLog, bucket: u32) -> Option<f64> {
    totals(log, bucket).delivery_ratio()
}

pub fn avg_throughput(log: &EventLog, bucket: u32) -> Result<f64> {
    Ok(totals(log, bucket).throughput_bps(sim_time(log)?))
}

/// Metrics of one bucket in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: u32,
    pub totals: BucketTotals,
    pub energy_per_bit: Option<f64>,
    pub delivery_ratio: Option<f64>,
    pub throughput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub sim_time_s: f64,
    pub buckets: Vec<BucketMetrics>,
}

impl RunMetrics {
    pub fn from_log(log: &EventLog) -> Result<Self> {
        let (protocol, seed, sim_time_s) = log
            .run_info()
            .ok_or_else(|| Error::Log("log has no run_info record".into()))?;
        let buckets = bucket_totals(log)
            .into_iter()
            .map(|(bucket, t)| BucketMetrics {
                bucket,
                totals: t,
                energy_per_bit: t.energy_per_bit(),
                delivery_ratio: t.delivery_ratio(),
                throughput_bps: t.throughput_bps(sim_time_s),
            })
            .collect();
        Ok(Self {
            protocol,
            seed,
            sim_time_s,
            buckets,
        })
    }

    pub fn bucket(&self, bucket: u32) -> Option<&BucketMetrics> {
        self.buckets.iter().find(|b| b.bucket == bucket)
    }
}

/// Sample mean and standard error of the defined values. Both are NaN
/// when no value is defined; the error is 0 for a single value.
pub fn mean_stderr(values: impl IntoIterator<Item = Option<f64>>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One line of the metrics table: a protocol's bucket averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub protocol: ProtocolKind,
    pub distance_bucket: u32,
    pub energy_per_bit: f64,
    pub delivery_ratio: f64,
    pub avg_throughput: f64,
    pub seeds: usize,
    pub energy_per_bit_stderr: f64,
    pub delivery_ratio_stderr: f64,
    pub avg_throughput_stderr: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "protocol",
    "distance_bucket",
    "energy_per_bit",
    "delivery_ratio",
    "avg_throughput",
    "seeds",
    "energy_per_bit_stderr",
    "delivery_ratio_stderr",
    "avg_throughput_stderr",
];

/// Groups runs by protocol and bucket, ordered by protocol then bucket.
pub fn aggregate(runs: &[RunMetrics]) -> Vec<MetricsRow> {
    let mut groups: BTreeMap<(ProtocolKind, u32), Vec<&BucketMetrics>> = BTreeMap::new();
    for r in runs {
        for b in &r.buckets {
            groups.entry((r.protocol, b.bucket)).or_default().push(b);
        }
    }
    groups
        .into_iter()
        .map(|((protocol, bucket), bs)| {
            let (epb, epb_se) = mean_stderr(bs.iter().map(|b| b.energy_per_bit));
            let (pdr, pdr_se) = mean_stderr(bs.iter().map(|b| b.delivery_ratio));
            let (thr, thr_se) = mean_stderr(bs.iter().map(|b| Some(b.throughput_bps)));
            MetricsRow {
                protocol,
                distance_bucket: bucket,
                energy_per_bit: epb,
                delivery_ratio: pdr,
                avg_throughput: thr,
                seeds: bs.len(),
                energy_per_bit_stderr: epb_se,
                delivery_ratio_stderr: pdr_se,
                avg_throughput_stderr: thr_se,
            }
        })
        .collect()
}

/// Formats like C's `%.12g`, writing `nan` for undefined values.
pub fn format_g12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.protocol.label(),
            r.distance_bucket,
            format_g12(r.energy_per_bit),
            format_g12(r.delivery_ratio),
            format_g12(r.avg_throughput),
            r.seeds,
            format_g12(r.energy_per_bit_stderr),
            format_g12(r.delivery_ratio_stderr),
            format_g12(r.avg_throughput_stderr),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every protocol with every seed on the worker pool, handing each
/// finished log to `each`. Results come back in protocol-major, seed-minor
/// order.
pub fn run_many<T, F>(base: &ScenarioConfig, protocols: &[ProtocolKind], seeds: &[u64], each: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ScenarioConfig, EventLog) -> Result<T> + Sync,
{
    base.validate()?;
    let jobs: Vec<ScenarioConfig> = protocols
        .iter()
        .flat_map(|&p| {
            seeds.iter().map(move |&s| {
                let mut cfg = base.clone();
                cfg.protocol = p;
                cfg.seed = s;
                cfg
            })
        })
        .collect();
    jobs.par_iter().map(|cfg| each(cfg, run(cfg)?)).collect()
}
