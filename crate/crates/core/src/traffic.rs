//! Flow generation for web browsing, 4K video and VR stations.
//!
//! VR flows are constant-bit-rate. A single uniform draw `y` is pushed through
//! both the loglogistic frame-size inverse CDF and the Burr frame inter-arrival
//! inverse CDF, and their ratio gives the rate.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::topology::Network;
use crate::util::largest_remainder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowType {
    #[serde(rename = "WB")]
    Wb,
    #[serde(rename = "V4K")]
    V4k,
    #[serde(rename = "VR")]
    Vr,
}

impl FlowType {
    /// Order used by every per-type array in this crate.
    pub const ALL: [FlowType; 3] = [FlowType::Wb, FlowType::V4k, FlowType::Vr];

    pub fn index(self) -> usize {
        match self {
            FlowType::Wb => 0,
            FlowType::V4k => 1,
            FlowType::Vr => 2,
        }
    }

    /// Scalar type identifier fed to the agent.
    pub fn type_id(self) -> f64 {
        match self {
            FlowType::V4k => 0.33,
            FlowType::Vr => 0.66,
            FlowType::Wb => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowType::Wb => "WB",
            FlowType::V4k => "V4K",
            FlowType::Vr => "VR",
        }
    }
}

impl fmt::Display for FlowType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loglogistic frame size and Burr inter-arrival parameters.
///
/// The defaults are a calibration guess (CALIBRATION-REQUIRED): 80 kB frames
/// at roughly 90 frames per second, a median VR rate near 58 Mbps, just above
/// the highest throttling level (54 Mbps) of the measured traces. Replace
/// them with fitted values when available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VrModelParams {
    /// Log-scale of the frame size, log-bytes.
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
    /// Burr scale, ms.
    pub a: f64,
    pub c: f64,
}

impl Default for VrModelParams {
    fn default() -> Self {
        Self { mu: 80_000f64.ln(), sigma: 0.18, k: 0.75, a: 9.4, c: 2.5 }
    }
}

impl VrModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.k > 0.0 && self.a > 0.0 && self.c > 0.0 && self.mu.is_finite()) {
            return Err(config("VR model needs sigma, k, a, c > 0 and finite mu"));
        }
        Ok(())
    }

    /// Loglogistic frame size CDF.
    pub fn frame_size_cdf(&self, bytes: f64) -> f64 {
        if bytes <= 0.0 {
            return 0.0;
        }
        1.0 / (1.0 + ((self.mu - bytes.ln()) / self.sigma).exp())
    }

    /// Burr inter-arrival CDF.
    pub fn interarrival_cdf(&self, ms: f64) -> f64 {
        if ms <= 0.0 {
            return 0.0;
        }
        1.0 - (1.0 + (ms / self.a).powf(self.c)).powf(-self.k)
    }
}

fn check_probability(y: f64) -> Result<()> {
    if y > 0.0 && y < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("probability {y} outside (0, 1)")))
    }
}

/// Frame size in bytes at quantile `y`.
pub fn vr_frame_size_inv_cdf(y: f64, params: &VrModelParams) -> Result<f64> {
    check_probability(y)?;
    Ok(params.mu.exp() * (y / (1.0 - y)).powf(params.sigma))
}

/// Frame inter-arrival time in ms at quantile `y`.
pub fn vr_interarrival_inv_cdf(y: f64, params: &VrModelParams) -> Result<f64> {
    check_probability(y)?;
    // (1/(1-y))^(1/k) - 1, kept accurate for tiny y.
    let base = (-(-y).ln_1p() / params.k).exp_m1();
    Ok(params.a * base.powf(1.0 / params.c))
}

/// Bytes per millisecond to Mbps.
pub fn bytes_per_ms_to_mbps(bytes: f64, ms: f64) -> f64 {
    bytes / ms * 8.0 / 1000.0
}

/// CBR rate of a VR flow for the quantile draw `y`.
pub fn vr_flow_rate(y: f64, params: &VrModelParams) -> Result<f64> {
    let size = vr_frame_size_inv_cdf(y, params)?;
    let gap = vr_interarrival_inv_cdf(y, params)?;
    Ok(bytes_per_ms_to_mbps(size, gap))
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let y: f64 = rng.gen();
        if y > 0.0 {
            return y;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub min: f64,
    pub max: f64,
}

impl RateRange {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOff {
    pub mean_on_s: f64,
    pub mean_off_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub wb_rate: RateRange,
    pub v4k_rate: RateRange,
    pub vr: VrModelParams,
    /// Station type proportions in `FlowType::ALL` order.
    pub mix: [f64; 3],
    /// ON/OFF activity in `FlowType::ALL` order.
    pub activity: [OnOff; 3],
}

impl Default for TrafficConfig {
    fn default() -> Self {
        let on_off = OnOff { mean_on_s: 10.0, mean_off_s: 10.0 };
        Self {
            wb_rate: RateRange { min: 1.0, max: 3.0 },
            v4k_rate: RateRange { min: 7.0, max: 25.0 },
            vr: VrModelParams::default(),
            mix: [0.8, 0.1, 0.1],
            activity: [on_off; 3],
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        for r in [self.wb_rate, self.v4k_rate] {
            if !(r.min >= 0.0 && r.max >= r.min && r.max.is_finite()) {
                return Err(config("rate ranges must be finite with 0 <= min <= max"));
            }
        }
        let sum: f64 = self.mix.iter().sum();
        if self.mix.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(config(format!("traffic mix must be a distribution, sums to {sum}")));
        }
        if self.activity.iter().any(|a| !(a.mean_on_s > 0.0 && a.mean_off_s > 0.0)) {
            return Err(config("ON/OFF means must be positive"));
        }
        self.vr.validate()
    }
}

/// A downlink CBR flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: u64,
    pub station: usize,
    pub flow_type: FlowType,
    pub rate_mbps: f64,
    pub arrival_s: f64,
    pub duration_s: f64,
    /// Share of the rate on each band, indexed by `BandId::index`.
    pub fractions: [f64; 3],
}

impl Flow {
    pub fn end_s(&self) -> f64 {
        self.arrival_s + self.duration_s
    }
}

pub fn draw_flow_rate<R: Rng>(flow_type: FlowType, cfg: &TrafficConfig, rng: &mut R) -> f64 {
    match flow_type {
        FlowType::Wb => cfg.wb_rate.sample(rng),
        FlowType::V4k => cfg.v4k_rate.sample(rng),
        FlowType::Vr => {
            let y = open_unit(rng);
            // Parameters are validated up front, and y is in (0, 1).
            vr_flow_rate(y, &cfg.vr).unwrap_or(0.0)
        }
    }
}

/// Flow type per station id, fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationTypes(pub Vec<FlowType>);

impl StationTypes {
    pub fn of(&self, station: usize) -> FlowType {
        self.0[station]
    }
}

/// Splits each AP's stations into types with largest-remainder quotas, then
/// shuffles which station receives which type.
pub fn assign_station_types<R: Rng>(network: &Network, mix: &[f64; 3], rng: &mut R) -> Result<StationTypes> {
    let sum: f64 = mix.iter().sum();
    if mix.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(config("type mix must be a distribution"));
    }
    let mut types = vec![FlowType::Wb; network.stations.len()];
    for ap in &network.aps {
        let quotas = largest_remainder(mix, ap.stations.len() as u32);
        let mut pool: Vec<FlowType> = FlowType::ALL
            .iter()
            .zip(&quotas)
            .flat_map(|(&t, &q)| std::iter::repeat(t).take(q as usize))
            .collect();
        // Fisher-Yates over the quota pool.
        for i in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=i);
            pool.swap(i, j);
        }
        for (&station, t) in ap.stations.iter().zip(pool) {
            types[station] = t;
        }
    }
    Ok(StationTypes(types))
}

/// Independent generator stream for one station.
pub fn station_rng(seed: u64, station: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(station as u64 + 1);
    rng
}

fn exponential<R: Rng>(mean: f64, rng: &mut R) -> f64 {
    -mean * open_unit(rng).ln()
}

/// Next flow of an idle station: an exponential OFF gap, then an exponential
/// ON period at a CBR rate drawn for the station's type.
pub fn next_arrival<R: Rng>(
    id: u64,
    station: usize,
    flow_type: FlowType,
    now: f64,
    cfg: &TrafficConfig,
    rng: &mut R,
) -> Flow {
    let activity = cfg.activity[flow_type.index()];
    let gap = exponential(activity.mean_off_s, rng);
    let duration = exponential(activity.mean_on_s, rng);
    let rate = draw_flow_rate(flow_type, cfg, rng);
    Flow {
        id,
        station,
        flow_type,
        rate_mbps: rate,
        arrival_s: now + gap,
        duration_s: duration,
        fractions: [0.0; 3],
    }
}

/// Writes one delimited record per flow.
pub fn write_flow_trace<W: Write>(mut out: W, flows: &[Flow]) -> Result<()> {
    writeln!(out, "id,station,type,rate_mbps,t_arrive,t_end")?;
    for f in flows {
        writeln!(out, "{},{},{},{},{},{}", f.id, f.station, f.flow_type, f.rate_mbps, f.arrival_s, f.end_s())?;
    }
    Ok(())
}
