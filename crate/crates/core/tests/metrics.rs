#![allow(clippy::field_reassign_with_default)]

use std::collections::{BTreeMap, HashMap};

use nanosim_core::metrics::{
    aggregate, avg_throughput, delivery_ratio, energy_per_bit, write_csv, RunMetrics, CSV_HEADER,
};
use nanosim_core::sim::log::{FlowSummary, LogRecord};
use nanosim_core::{run, EventLog, LogDetail, NodeId, ProtocolKind, ScenarioConfig, SimTime};

const E_BIT: f64 = 1.09375e-15;

fn synthetic(sim_time_s: f64, flows: &[(u32, u64, u64, f64)]) -> EventLog {
    let mut log = EventLog::new(LogDetail::Flows);
    log.push(LogRecord::RunInfo {
        protocol: ProtocolKind::Rmrls,
        seed: 1,
        sim_time_s,
        packet_bits: 1024,
        detail: LogDetail::Flows,
    });
    for (i, &(bucket, generated, delivered, energy)) in flows.iter().enumerate() {
        log.push(LogRecord::FlowSummary(FlowSummary {
            source: NodeId(100 + i as u32),
            bucket,
            distance_mm: bucket as f64 - 0.5,
            generated,
            delivered,
            delivered_bits: delivered * 1024,
            data_energy_j: energy,
            control_energy_j: 0.0,
        }));
    }
    log
}

#[test]
fn one_hop_packet_costs_one_and_a_half_e_bit_per_bit() {
    let one = 1024.0 * E_BIT * 1.5;
    let log = synthetic(1.0, &[(1, 1, 1, one)]);
    assert!((energy_per_bit(&log, 1).unwrap() - E_BIT * 1.5).abs() < 1e-30);
    let doubled = synthetic(1.0, &[(1, 2, 2, 2.0 * one)]);
    assert_eq!(energy_per_bit(&doubled, 1), energy_per_bit(&log, 1));
}

#[test]
fn undefined_values_are_flagged() {
    let log = synthetic(10.0, &[(3, 5, 0, 1e-12)]);
    assert_eq!(energy_per_bit(&log, 3), None);
    assert_eq!(delivery_ratio(&log, 3), Some(0.0));
    assert_eq!(avg_throughput(&log, 3).unwrap(), 0.0);
    assert_eq!(delivery_ratio(&log, 4), None);
    assert_eq!(energy_per_bit(&log, 4), None);
}

#[test]
fn throughput_arithmetic() {
    let log = synthetic(120.0, &[(2, 100, 100, 1e-9)]);
    assert!((avg_throughput(&log, 2).unwrap() - 853.3333333333334).abs() < 1e-9);
    assert_eq!(delivery_ratio(&log, 2), Some(1.0));
    let split = synthetic(120.0, &[(2, 60, 50, 1e-9), (2, 40, 40, 1e-9)]);
    assert_eq!(delivery_ratio(&split, 2), Some(0.9));
    assert!((avg_throughput(&split, 2).unwrap() - 90.0 * 1024.0 / 120.0).abs() < 1e-9);
}

#[test]
fn throughput_is_delivery_ratio_times_offered_load() {
    let mut cfg = ScenarioConfig::default();
    cfg.topology.node_count = 80;
    cfg.traffic.sources_per_bucket = 3;
    cfg.traffic.sim_time_s = 1.0;
    let log = run(&cfg).unwrap();
    let m = RunMetrics::from_log(&log).unwrap();
    for b in &m.buckets {
        let offered = b.totals.generated as f64 * 1024.0 / cfg.traffic.sim_time_s;
        let pdr = b.delivery_ratio.unwrap();
        assert!(
            (b.throughput_bps - pdr * offered).abs() <= 1e-9 * offered,
            "bucket {}",
            b.bucket
        );
        assert!((0.0..=1.0).contains(&pdr));
        if b.totals.delivered > 0 {
            assert!(b.energy_per_bit.unwrap() > 0.0);
        }
    }
}

/// Energy per bit, delivery ratio and throughput.
type Replayed = (f64, f64, f64);

/// Per-seed bucket metrics recomputed from individual transmissions,
/// deliveries and drops.
fn replay(log: &EventLog) -> BTreeMap<u32, Replayed> {
    let (sim_time, bits) = match &log.records()[0] {
        LogRecord::RunInfo {
            sim_time_s,
            packet_bits,
            ..
        } => (*sim_time_s, *packet_bits as f64),
        _ => unreachable!(),
    };
    let bucket: HashMap<NodeId, u32> = log.flows().map(|f| (f.source, f.bucket)).collect();
    let mut acc: BTreeMap<u32, (f64, u64, u64)> = BTreeMap::new();
    for r in log.records() {
        match r {
            LogRecord::Tx {
                energy_j,
                flow: Some(f),
                ..
            }
            | LogRecord::Rx {
                energy_j,
                flow: Some(f),
                ..
            } => {
                acc.entry(bucket[&f.source]).or_default().0 += energy_j;
            }
            LogRecord::Delivered { source, .. } => {
                let e = acc.entry(bucket[source]).or_default();
                e.1 += 1;
                e.2 += 1;
            }
            LogRecord::Dropped { source, .. } => acc.entry(bucket[source]).or_default().2 += 1,
            _ => {}
        }
    }
    acc.into_iter()
        .map(|(b, (energy, delivered, generated))| {
            let d = delivered as f64;
            (b, (energy / (d * bits), d / generated as f64, d * bits / sim_time))
        })
        .collect()
}

fn close(csv: &str, want: f64) -> bool {
    let got: f64 = csv.parse().unwrap();
    got == want || (got - want).abs() <= 1e-11 * want.abs().max(got.abs())
}

#[test]
fn csv_matches_log_replay() {
    let mut runs = Vec::new();
    let mut replays: BTreeMap<(ProtocolKind, u32), Vec<Replayed>> = BTreeMap::new();
    for p in ProtocolKind::ALL {
        for seed in 1..=3 {
            let mut cfg = ScenarioConfig::default();
            cfg.seed = seed;
            cfg.protocol = p;
            cfg.topology.node_count = 100;
            cfg.traffic.sources_per_bucket = 2;
            cfg.traffic.sim_time_s = 0.8;
            cfg.log.detail = LogDetail::Full;
            let log = run(&cfg).unwrap();
            for (b, v) in replay(&log) {
                replays.entry((p, b)).or_default().push(v);
            }
            runs.push(RunMetrics::from_log(&log).unwrap());
        }
    }
    let mut buf = Vec::new();
    write_csv(&aggregate(&runs), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let mut rows = 0;
    for line in lines {
        rows += 1;
        let f: Vec<&str> = line.split(',').collect();
        let p: ProtocolKind = f[0].parse().unwrap();
        let b: u32 = f[1].parse().unwrap();
        let per_seed = &replays[&(p, b)];
        let n = per_seed.len() as f64;
        let mean = |i: usize| per_seed.iter().map(|v| [v.0, v.1, v.2][i]).sum::<f64>() / n;
        assert_eq!(f[5], "3");
        assert!(close(f[2], mean(0)), "{line}: epb {}", mean(0));
        assert!(close(f[3], mean(1)), "{line}: pdr {}", mean(1));
        assert!(close(f[4], mean(2)), "{line}: thr {}", mean(2));
    }
    assert_eq!(rows, 30);
}

#[test]
fn sim_time_comes_from_the_log() {
    let log = synthetic(2.0, &[(1, 4, 4, 1e-12)]);
    assert_eq!(avg_throughput(&log, 1).unwrap(), 2048.0);
    let empty = EventLog::new(LogDetail::Flows);
    assert!(avg_throughput(&empty, 1).is_err());
    assert_eq!(SimTime::from_secs(2.0).as_secs(), 2.0);
}
