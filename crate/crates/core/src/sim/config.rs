//! Scenario configuration: deployment, traffic, radio, energy and protocol
//! constants. Loaded from TOML; every field has a default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyCosts, EnergyGate};
use crate::error::{Error, Result};
use crate::link::{EstimatorConfig, KalmanParams, PowerScale};
use crate::model::{Position, WireSizes};
use crate::sim::channel::ChannelModel;
use crate::similarity::SimilarityParams;

/// Routing protocol driven by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Rmrls,
    Sfr,
    RandomNextHop,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Rmrls, ProtocolKind::Sfr, ProtocolKind::RandomNextHop];

    /// Upper-case label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ProtocolKind::Rmrls => "RMRLS",
            ProtocolKind::Sfr => "SFR",
            ProtocolKind::RandomNextHop => "RANDOM_NEXT_HOP",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rmrls" => Ok(ProtocolKind::Rmrls),
            "sfr" => Ok(ProtocolKind::Sfr),
            "random_next_hop" | "random" | "ts_ebcnf" => Ok(ProtocolKind::RandomNextHop),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaConfig {
    pub width_mm: f64,
    pub height_mm: f64,
    pub nc_x_mm: f64,
    pub nc_y_mm: f64,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            width_mm: 10.0,
            height_mm: 10.0,
            nc_x_mm: 11.0,
            nc_y_mm: 5.0,
        }
    }
}

impl AreaConfig {
    pub fn nc_position(&self) -> Position {
        Position::new(self.nc_x_mm, self.nc_y_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Relay nanonodes deployed uniformly in the area.
    pub node_count: usize,
    pub comm_range_mm: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            node_count: 200,
            comm_range_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Distance buckets; bucket `d` holds sources at NC distance in (d-1, d] mm.
    pub buckets: u32,
    pub sources_per_bucket: usize,
    /// Fixed source positions. When non-empty they replace bucket placement.
    pub explicit_sources: Vec<Position>,
    pub packet_bytes: u32,
    pub packet_interval_s: f64,
    /// Traffic starts after this warm-up, so link estimators have samples.
    pub start_s: f64,
    pub sim_time_s: f64,
    /// Upper bound on route-discovery rounds per source.
    pub iterations: u32,
    /// Extra time after `sim_time_s` for in-flight traffic to settle.
    pub drain_s: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            buckets: 10,
            sources_per_bucket: 20,
            explicit_sources: Vec::new(),
            packet_bytes: 128,
            packet_interval_s: 0.01,
            start_s: 0.5,
            sim_time_s: 120.0,
            iterations: 1500,
            drain_s: 1.0,
        }
    }
}

impl TrafficConfig {
    pub fn packet_bits(&self) -> u32 {
        self.packet_bytes * 8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub propagation_speed_mps: f64,
    pub data_rate_bps: f64,
    pub tx_power_w: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            propagation_speed_mps: 3e8,
            data_rate_bps: 1e9,
            tx_power_w: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_freq_hz: f64,
    pub absorption_per_m: f64,
    /// Standard deviation of the per-sample fluctuation, dB.
    pub fluctuation_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 1e12,
            absorption_per_m: 0.1,
            fluctuation_db: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyOverride {
    pub node: u32,
    pub joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub initial_j: f64,
    pub capacity_j: f64,
    pub harvest_rate_w: f64,
    pub receive_ratio: f64,
    /// Residual-energy threshold for route participation; fixes the
    /// per-bit energy together with `epsilon` and the message sizes.
    pub threshold_j: f64,
    pub epsilon: f64,
    /// Per-node initial energy overrides.
    pub overrides: Vec<EnergyOverride>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            initial_j: 4e-6,
            capacity_j: 8e-6,
            // 10% of the initial energy over one 5 s WET slot
            harvest_rate_w: 0.1 * 4e-6 / 5.0,
            receive_ratio: 0.5,
            threshold_j: 1.4e-13,
            epsilon: 1.0,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotConfig {
    pub wet_s: f64,
    pub swipt_s: f64,
    pub wit_s: f64,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            wet_s: 5.0,
            swipt_s: 0.01,
            wit_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub scale: PowerScale,
    pub k_transition: f64,
    pub h_measure: f64,
    /// Defaults to 1e-4 x (typical value)^2.
    pub q_process: Option<f64>,
    /// Defaults to 1e-2 x (typical value)^2.
    pub z_measure: Option<f64>,
    pub initial_covariance: f64,
    pub batch_size: usize,
    /// dB reference in dBm. Defaults to the noiseless received power at
    /// the edge of the communication range.
    pub reference_dbm: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            scale: PowerScale::Db,
            k_transition: 1.0,
            h_measure: 1.0,
            q_process: None,
            z_measure: None,
            initial_covariance: 1.0,
            batch_size: 5,
            reference_dbm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub tau: usize,
    pub hello_period_s: f64,
    pub missed_hellos: u32,
    pub nc_window_s: f64,
    /// How long a discovering node waits for NFEE replies.
    pub discovery_window_s: f64,
    /// Source gives up on a route request after this long without an RREP.
    pub route_timeout_s: f64,
    pub route_ttl_s: f64,
    /// End-to-end data-ACK timeout as a multiple of the path round trip.
    pub e2e_timeout_factor: f64,
    /// Link-layer acknowledgement timeout.
    pub ack_timeout_s: f64,
    pub similarity: SimilarityParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            tau: 2,
            hello_period_s: 0.1,
            missed_hellos: 3,
            nc_window_s: 0.05,
            discovery_window_s: 1e-5,
            route_timeout_s: 0.1,
            route_ttl_s: 10.0,
            e2e_timeout_factor: 4.0,
            ack_timeout_s: 1e-5,
            similarity: SimilarityParams::default(),
        }
    }
}

/// Amount of detail written to the event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogDetail {
    /// Topology, route events and per-flow and per-node summaries.
    Flows,
    /// Adds the fate of every packet and periodic energy samples.
    #[default]
    Packets,
    /// Adds every transmission, reception, harvest credit and RREQ hop.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogConfig {
    pub detail: LogDetail,
    pub energy_sample_s: f64,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            detail: LogDetail::Packets,
            energy_sample_s: 1.0,
        }
    }
}

/// Scheduled node failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFailure {
    pub node: u32,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub area: AreaConfig,
    pub topology: TopologyConfig,
    pub traffic: TrafficConfig,
    pub radio: RadioConfig,
    pub channel: ChannelConfig,
    pub energy: EnergyConfig,
    pub slots: SlotConfig,
    pub estimator: EstimatorSection,
    pub protocol_params: ProtocolConfig,
    pub sizes: WireSizes,
    pub failures: Vec<NodeFailure>,
    pub log: LogConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            protocol: ProtocolKind::Rmrls,
            area: AreaConfig::default(),
            topology: TopologyConfig::default(),
            traffic: TrafficConfig::default(),
            radio: RadioConfig::default(),
            channel: ChannelConfig::default(),
            energy: EnergyConfig::default(),
            slots: SlotConfig::default(),
            estimator: EstimatorSection::default(),
            protocol_params: ProtocolConfig::default(),
            sizes: WireSizes::default(),
            failures: Vec::new(),
            log: LogConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML text, applying `KEY=VALUE` overrides (dotted keys) first.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ScenarioConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    /// Canonical TOML rendering, used for hashing and manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("area.width_mm", self.area.width_mm),
            ("area.height_mm", self.area.height_mm),
            ("traffic.packet_interval_s", self.traffic.packet_interval_s),
            ("radio.propagation_speed_mps", self.radio.propagation_speed_mps),
            ("radio.data_rate_bps", self.radio.data_rate_bps),
            ("radio.tx_power_w", self.radio.tx_power_w),
            ("channel.carrier_freq_hz", self.channel.carrier_freq_hz),
            ("energy.threshold_j", self.energy.threshold_j),
            ("energy.epsilon", self.energy.epsilon),
            ("protocol_params.hello_period_s", self.protocol_params.hello_period_s),
            ("protocol_params.nc_window_s", self.protocol_params.nc_window_s),
            (
                "protocol_params.discovery_window_s",
                self.protocol_params.discovery_window_s,
            ),
            ("protocol_params.route_timeout_s", self.protocol_params.route_timeout_s),
            ("protocol_params.route_ttl_s", self.protocol_params.route_ttl_s),
            (
                "protocol_params.e2e_timeout_factor",
                self.protocol_params.e2e_timeout_factor,
            ),
            ("protocol_params.ack_timeout_s", self.protocol_params.ack_timeout_s),
            ("slots.wet_s", self.slots.wet_s),
            ("log.energy_sample_s", self.log.energy_sample_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let non_negative = [
            ("topology.comm_range_mm", self.topology.comm_range_mm),
            ("traffic.start_s", self.traffic.start_s),
            ("traffic.sim_time_s", self.traffic.sim_time_s),
            ("traffic.drain_s", self.traffic.drain_s),
            ("channel.absorption_per_m", self.channel.absorption_per_m),
            ("channel.fluctuation_db", self.channel.fluctuation_db),
            ("energy.initial_j", self.energy.initial_j),
            ("energy.harvest_rate_w", self.energy.harvest_rate_w),
            ("energy.receive_ratio", self.energy.receive_ratio),
            ("slots.swipt_s", self.slots.swipt_s),
            ("slots.wit_s", self.slots.wit_s),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        if self.energy.capacity_j < self.energy.initial_j {
            return bad(format!(
                "energy.capacity_j ({}) is below energy.initial_j ({})",
                self.energy.capacity_j, self.energy.initial_j
            ));
        }
        if self.traffic.packet_bytes == 0 {
            return bad("traffic.packet_bytes must be positive".into());
        }
        if self.protocol_params.tau == 0 {
            return bad("protocol_params.tau must be at least 1".into());
        }
        if self.estimator.batch_size == 0 {
            return bad("estimator.batch_size must be at least 1".into());
        }
        if self.traffic.explicit_sources.is_empty() && self.traffic.buckets == 0 {
            return bad("traffic.buckets must be at least 1".into());
        }
        let nc = self.area.nc_position();
        if nc.x >= 0.0 && nc.x <= self.area.width_mm && nc.y >= 0.0 && nc.y <= self.area.height_mm {
            return bad("the NC must lie outside the deployment area".into());
        }
        if self.topology.node_count + self.source_count() >= u32::MAX as usize {
            return bad("too many nodes".into());
        }
        for o in &self.energy.overrides {
            if !(o.joules >= 0.0) {
                return bad(format!("energy override for node {} is negative", o.node));
            }
        }
        for f in &self.failures {
            if f.node == 0 {
                return bad("the NC cannot be failed".into());
            }
            if !(f.at_s >= 0.0) {
                return bad(format!("failure time for node {} is negative", f.node));
            }
        }
        self.protocol_params
            .similarity
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.gate()?;
        Ok(())
    }

    pub fn source_count(&self) -> usize {
        if self.traffic.explicit_sources.is_empty() {
            self.traffic.buckets as usize * self.traffic.sources_per_bucket
        } else {
            self.traffic.explicit_sources.len()
        }
    }

    pub fn gate(&self) -> Result<EnergyGate> {
        EnergyGate::from_threshold(self.energy.threshold_j, self.energy.epsilon, self.sizes)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn costs(&self) -> Result<EnergyCosts> {
        Ok(EnergyCosts {
            e_bit: self.gate()?.e_bit,
            receive_ratio: self.energy.receive_ratio,
        })
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            carrier_freq_hz: self.channel.carrier_freq_hz,
            absorption_per_m: self.channel.absorption_per_m,
            fluctuation_db: self.channel.fluctuation_db,
            propagation_speed_mps: self.radio.propagation_speed_mps,
        }
    }

    /// Noiseless received power at `distance_mm`.
    fn received_at(&self, distance_mm: f64) -> f64 {
        let pl = self
            .channel_model()
            .path_loss(distance_mm.max(1e-6) * 1e-3)
            .expect("distance is positive");
        self.radio.tx_power_w / pl
    }

    /// Link estimator settings with derived defaults filled in.
    pub fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        let range = if self.topology.comm_range_mm > 0.0 {
            self.topology.comm_range_mm
        } else {
            1.0
        };
        let reference_w = match e.reference_dbm {
            Some(dbm) => 1e-3 * 10f64.powf(dbm / 10.0),
            None => self.received_at(range),
        };
        let mut cfg = EstimatorConfig {
            params: KalmanParams::scaled_to(1.0),
            batch_size: e.batch_size,
            scale: e.scale,
            reference_w,
        };
        let typical = cfg.to_units(self.received_at(range / 2.0)).abs().max(f64::MIN_POSITIVE);
        let scaled = KalmanParams::scaled_to(typical);
        cfg.params = KalmanParams {
            k_transition: e.k_transition,
            h_measure: e.h_measure,
            q_process: e.q_process.unwrap_or(scaled.q_process),
            z_measure: e.z_measure.unwrap_or(scaled.z_measure),
            initial_covariance: e.initial_covariance,
        };
        cfg
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    // Parse the value as a TOML value; bare words become strings.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key in `{spec}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
