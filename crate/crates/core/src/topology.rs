//! Physical network: AP and station placement, enterprise path loss, SNR and
//! the SNR-to-rate mapping for each of the three 802.11be bands.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

/// Thermal noise power spectral density, dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// OFDM symbol duration with a 0.8 us guard interval, microseconds.
const SYMBOL_US: f64 = 13.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandId {
    #[serde(rename = "2.4GHz")]
    Band24,
    #[serde(rename = "5GHz")]
    Band5,
    #[serde(rename = "6GHz")]
    Band6,
}

impl BandId {
    pub const ALL: [BandId; 3] = [BandId::Band24, BandId::Band5, BandId::Band6];

    pub fn index(self) -> usize {
        match self {
            BandId::Band24 => 0,
            BandId::Band5 => 1,
            BandId::Band6 => 2,
        }
    }

    /// Carrier frequency in GHz.
    pub fn carrier_ghz(self) -> f64 {
        match self {
            BandId::Band24 => 2.437,
            BandId::Band5 => 5.230,
            BandId::Band6 => 6.295,
        }
    }
}

/// Allowed channel widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Bandwidth {
    Mhz20,
    Mhz40,
    Mhz80,
    Mhz160,
}

impl Bandwidth {
    pub fn mhz(self) -> u32 {
        match self {
            Bandwidth::Mhz20 => 20,
            Bandwidth::Mhz40 => 40,
            Bandwidth::Mhz80 => 80,
            Bandwidth::Mhz160 => 160,
        }
    }

    /// Data subcarriers of the full-bandwidth resource unit.
    fn data_subcarriers(self) -> u32 {
        match self {
            Bandwidth::Mhz20 => 234,
            Bandwidth::Mhz40 => 468,
            Bandwidth::Mhz80 => 980,
            Bandwidth::Mhz160 => 1960,
        }
    }
}

impl TryFrom<u32> for Bandwidth {
    type Error = crate::Error;

    fn try_from(mhz: u32) -> Result<Self> {
        match mhz {
            20 => Ok(Bandwidth::Mhz20),
            40 => Ok(Bandwidth::Mhz40),
            80 => Ok(Bandwidth::Mhz80),
            160 => Ok(Bandwidth::Mhz160),
            other => Err(domain(format!("bandwidth {other} MHz not in {{20,40,80,160}}"))),
        }
    }
}

impl From<Bandwidth> for u32 {
    fn from(bw: Bandwidth) -> u32 {
        bw.mhz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub reference_loss_db: f64,
    pub breakpoint_m: f64,
    pub walls: u32,
    pub wall_loss_db: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { reference_loss_db: 40.05, breakpoint_m: 10.0, walls: 0, wall_loss_db: 7.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub ap_tx_power_dbm: f64,
    pub sta_tx_power_dbm: f64,
    pub noise_figure_db: f64,
    /// Stored for completeness; channel access is not modeled at flow level.
    pub cca_threshold_dbm: f64,
    pub max_spatial_streams: u32,
    pub max_mcs: u8,
    pub packet_error_rate: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            ap_tx_power_dbm: 20.0,
            sta_tx_power_dbm: 15.0,
            noise_figure_db: 7.0,
            cca_threshold_dbm: -82.0,
            max_spatial_streams: 16,
            max_mcs: 13,
            packet_error_rate: 0.10,
        }
    }
}

/// Enterprise path loss in dB.
pub fn path_loss(distance_m: f64, carrier_ghz: f64, params: &PathLossParams) -> Result<f64> {
    if !(distance_m > 0.0) || !(carrier_ghz > 0.0) {
        return Err(domain(format!(
            "path loss needs positive distance and frequency, got d={distance_m}, f={carrier_ghz}"
        )));
    }
    let bp = params.breakpoint_m;
    let mut loss = params.reference_loss_db
        + 20.0 * (carrier_ghz / 2.4).log10()
        + 20.0 * distance_m.min(bp).log10();
    if distance_m > bp {
        loss += 35.0 * (distance_m / bp).log10();
    }
    Ok(loss + params.wall_loss_db * f64::from(params.walls))
}

/// Received SNR in dB: transmit power minus loss minus thermal noise over the
/// channel plus the receiver noise figure.
pub fn link_snr(tx_power_dbm: f64, loss_db: f64, noise_figure_db: f64, bandwidth: Bandwidth) -> f64 {
    let noise_dbm = THERMAL_NOISE_DBM_HZ + 10.0 * (f64::from(bandwidth.mhz()) * 1e6).log10();
    tx_power_dbm - loss_db - (noise_dbm + noise_figure_db)
}

/// Modulation order (bits per subcarrier) and coding rate for MCS 0..=13.
const MCS_MODULATION: [(u32, f64); 14] = [
    (1, 1.0 / 2.0),
    (2, 1.0 / 2.0),
    (2, 3.0 / 4.0),
    (4, 1.0 / 2.0),
    (4, 3.0 / 4.0),
    (6, 2.0 / 3.0),
    (6, 3.0 / 4.0),
    (6, 5.0 / 6.0),
    (8, 3.0 / 4.0),
    (8, 5.0 / 6.0),
    (10, 3.0 / 4.0),
    (10, 5.0 / 6.0),
    (12, 3.0 / 4.0),
    (12, 5.0 / 6.0),
];

/// PHY rate of one spatial stream at the given MCS, Mbps (0.8 us GI).
pub fn mcs_phy_rate(mcs: u8, bandwidth: Bandwidth) -> f64 {
    let (bits, code) = MCS_MODULATION[usize::from(mcs)];
    f64::from(bandwidth.data_subcarriers()) * f64::from(bits) * code / SYMBOL_US
}

/// SNR thresholds for MCS selection. Entry `m` is the minimum SNR for MCS `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    pub thresholds_db: Vec<f64>,
}

impl Default for McsTable {
    fn default() -> Self {
        Self { thresholds_db: (0..14).map(|m| 2.0 + 3.0 * f64::from(m)).collect() }
    }
}

impl McsTable {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds_db.is_empty() || self.thresholds_db.len() > MCS_MODULATION.len() {
            return Err(config("MCS table needs between 1 and 14 thresholds"));
        }
        if self.thresholds_db.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config("MCS thresholds must be strictly increasing"));
        }
        Ok(())
    }

    /// Highest MCS whose threshold the SNR meets.
    pub fn select(&self, snr_db: f64, max_mcs: u8) -> Option<u8> {
        self.thresholds_db
            .iter()
            .take(usize::from(max_mcs) + 1)
            .rposition(|&t| snr_db >= t)
            .map(|m| m as u8)
    }
}

/// Achievable goodput in Mbps after packet errors.
pub fn snr_to_rate(snr_db: f64, bandwidth: Bandwidth, streams: u32, table: &McsTable, radio: &RadioParams) -> f64 {
    let streams = streams.clamp(1, radio.max_spatial_streams);
    match table.select(snr_db, radio.max_mcs) {
        Some(mcs) => mcs_phy_rate(mcs, bandwidth) * f64::from(streams) * (1.0 - radio.packet_error_rate),
        None => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationCapability {
    bands: Vec<BandId>,
}

impl StationCapability {
    /// The `n_f` lowest-frequency bands.
    pub fn with_interfaces(n_f: usize) -> Result<Self> {
        if !(1..=3).contains(&n_f) {
            return Err(domain(format!("interface count {n_f} not in 1..=3")));
        }
        Ok(Self { bands: BandId::ALL[..n_f].to_vec() })
    }

    pub fn n_f(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn supports(&self, band: BandId) -> bool {
        self.bands.contains(&band)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub snr_db: f64,
    pub rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: usize,
    pub ap: usize,
    pub position: [f64; 2],
    pub distance_m: f64,
    pub capability: StationCapability,
    /// Indexed by `BandId::index`; rate is 0 on unsupported bands.
    pub links: [LinkState; 3],
}

impl Station {
    pub fn rate(&self, band: BandId) -> f64 {
        self.links[band.index()].rate_mbps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: usize,
    pub position: [f64; 2],
    /// Global station ids attached to this AP.
    pub stations: Vec<usize>,
}

/// Inclusive integer range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformCount {
    pub min: usize,
    pub max: usize,
}

impl UniformCount {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub stations_per_ap: UniformCount,
    /// Probability of a station having 1, 2 or 3 interfaces.
    pub capability_mix: [f64; 3],
    /// Channel width per band, indexed by `BandId::index`.
    pub bandwidths: [Bandwidth; 3],
    /// Spatial streams used by each station link.
    pub station_streams: u32,
    pub ap_spacing_m: f64,
    pub path_loss: PathLossParams,
    pub radio: RadioParams,
    pub mcs: McsTable,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_aps: 5,
            stations_per_ap: UniformCount { min: 15, max: 20 },
            capability_mix: [0.2, 0.4, 0.4],
            bandwidths: [Bandwidth::Mhz20, Bandwidth::Mhz80, Bandwidth::Mhz160],
            station_streams: 2,
            ap_spacing_m: 30.0,
            path_loss: PathLossParams::default(),
            radio: RadioParams::default(),
            mcs: McsTable::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_aps == 0 {
            return Err(config("network needs at least one AP"));
        }
        if self.stations_per_ap.max == 0 || self.stations_per_ap.min > self.stations_per_ap.max {
            return Err(config("stations_per_ap must be a non-empty range with max > 0"));
        }
        let sum: f64 = self.capability_mix.iter().sum();
        if self.capability_mix.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(config(format!("capability_mix must be a distribution, sums to {sum}")));
        }
        if self.station_streams == 0 || self.station_streams > self.radio.max_spatial_streams {
            return Err(config("station_streams must lie in 1..=max_spatial_streams"));
        }
        self.mcs.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub aps: Vec<AccessPoint>,
    pub stations: Vec<Station>,
    pub bandwidths: [Bandwidth; 3],
}

impl Network {
    pub fn station(&self, id: usize) -> &Station {
        &self.stations[id]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn sample_capability<R: Rng>(mix: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    // Round-off at the top end.
    mix.iter().rposition(|&p| p > 0.0).unwrap_or(2) + 1
}

/// Places APs on a line and scatters stations around them. A pure function of
/// `(cfg, seed)`.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aps = Vec::with_capacity(cfg.num_aps);
    let mut stations = Vec::new();

    for ap_id in 0..cfg.num_aps {
        let ap_pos = [ap_id as f64 * cfg.ap_spacing_m, 0.0];
        let count = cfg.stations_per_ap.sample(&mut rng);
        // 80% of the stations in [1, 8] m, the rest close in at [1, 3] m.
        let far = (0.8 * count as f64).round() as usize;
        let mut ids = Vec::with_capacity(count);
        for k in 0..count {
            let radius = if k < far { rng.gen_range(1.0..=8.0) } else { rng.gen_range(1.0..=3.0) };
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let position = [ap_pos[0] + radius * angle.cos(), ap_pos[1] + radius * angle.sin()];
            let radios = sample_capability(&cfg.capability_mix, &mut rng);

            let mut links = [LinkState { snr_db: 0.0, rate_mbps: 0.0 }; 3];
            for band in BandId::ALL {
                let bw = cfg.bandwidths[band.index()];
                let loss = path_loss(radius, band.carrier_ghz(), &cfg.path_loss)?;
                let snr = link_snr(cfg.radio.ap_tx_power_dbm, loss, cfg.radio.noise_figure_db, bw);
                links[band.index()] = LinkState { snr_db: snr, rate_mbps: 0.0 };
                if band.index() < radios {
                    links[band.index()].rate_mbps = snr_to_rate(snr, bw, cfg.station_streams, &cfg.mcs, &cfg.radio);
                }
            }
            // Links without a usable MCS are never set up; the lowest band is
            // kept so every station has an interface.
            let usable = links[..radios].iter().take_while(|l| l.rate_mbps > 0.0).count().max(1);
            for l in &mut links[usable..] {
                l.rate_mbps = 0.0;
            }
            let capability = StationCapability::with_interfaces(usable)?;

            let id = stations.len();
            stations.push(Station { id, ap: ap_id, position, distance_m: radius, capability, links });
            ids.push(id);
        }
        aps.push(AccessPoint { id: ap_id, position: ap_pos, stations: ids });
    }

    if stations.is_empty() {
        return Err(config("network has no stations"));
    }
    Ok(Network { aps, stations, bandwidths: cfg.bandwidths })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn path_loss_reference_points() {
        let p = PathLossParams::default();
        assert!(close(path_loss(1.0, 2.4, &p).unwrap(), 40.05, 1e-12));
        assert!(close(path_loss(10.0, 2.4, &p).unwrap(), 60.05, 1e-12));
        assert!(close(path_loss(20.0, 2.4, &p).unwrap(), 70.586_05, 1e-4));
    }

    #[test]
    fn path_loss_continuous_at_breakpoint() {
        let p = PathLossParams { walls: 2, ..Default::default() };
        for band in BandId::ALL {
            let f = band.carrier_ghz();
            let left = path_loss(10.0 - 1e-9, f, &p).unwrap();
            let right = path_loss(10.0 + 1e-9, f, &p).unwrap();
            let expected = 60.05 + 20.0 * (f / 2.4).log10() + 14.0;
            assert!(close(left, expected, 1e-6) && close(right, expected, 1e-6));
        }
    }

    #[test]
    fn unreachable_bands_are_not_linked() {
        let mut cfg = NetworkConfig { num_aps: 3, ..Default::default() };
        cfg.path_loss.walls = 7;
        let net = build_network(&cfg, 12).unwrap();
        let mut shrunk = 0;
        for s in &net.stations {
            let n = s.capability.n_f();
            for (i, l) in s.links.iter().enumerate() {
                if i < n && n > 1 {
                    assert!(l.rate_mbps > 0.0);
                }
                if i >= n {
                    assert_eq!(l.rate_mbps, 0.0);
                }
            }
            shrunk += usize::from(s.links[2].snr_db < cfg.mcs.thresholds_db[0]);
        }
        assert!(shrunk > 0, "wall loss should push some 6 GHz links out of range");
    }

    #[test]
    fn path_loss_rejects_bad_inputs() {
        let p = PathLossParams::default();
        assert!(path_loss(0.0, 2.4, &p).is_err());
        assert!(path_loss(5.0, -1.0, &p).is_err());
        assert!(path_loss(f64::NAN, 2.4, &p).is_err());
    }

    #[test]
    fn snr_hand_value() {
        let snr = link_snr(20.0, 40.05, 7.0, Bandwidth::Mhz20);
        assert!(close(snr, 20.0 - 40.05 - (-174.0 + 73.0103 + 7.0), 1e-4));
        assert!(close(snr, 73.94, 1e-2));
        assert_eq!(link_snr(20.0, f64::INFINITY, 7.0, Bandwidth::Mhz20), f64::NEG_INFINITY);
    }

    #[test]
    fn mcs13_phy_rates() {
        assert!(close(mcs_phy_rate(13, Bandwidth::Mhz20), 172.06, 0.01));
        assert!(close(mcs_phy_rate(13, Bandwidth::Mhz160), 1441.18, 0.01));
        assert!(close(mcs_phy_rate(0, Bandwidth::Mhz20), 8.60, 0.01));
    }

    #[test]
    fn rate_saturates_and_floors() {
        let t = McsTable::default();
        let r = RadioParams::default();
        assert_eq!(snr_to_rate(1.0, Bandwidth::Mhz20, 1, &t, &r), 0.0);
        assert_eq!(snr_to_rate(f64::NEG_INFINITY, Bandwidth::Mhz20, 1, &t, &r), 0.0);
        let top = snr_to_rate(f64::INFINITY, Bandwidth::Mhz160, 16, &t, &r);
        assert!(close(top, mcs_phy_rate(13, Bandwidth::Mhz160) * 16.0 * 0.9, 1e-9));
    }

    #[test]
    fn rate_monotone_over_sweep() {
        let t = McsTable::default();
        let r = RadioParams::default();
        for bw in [Bandwidth::Mhz20, Bandwidth::Mhz40, Bandwidth::Mhz80, Bandwidth::Mhz160] {
            let mut prev = 0.0;
            for i in 0..1000 {
                let snr = -10.0 + 60.0 * f64::from(i) / 999.0;
                let rate = snr_to_rate(snr, bw, 2, &t, &r);
                assert!(rate >= prev);
                assert!(snr_to_rate(snr, bw, 3, &t, &r) >= rate);
                prev = rate;
            }
        }
    }

    #[test]
    fn bandwidth_rejects_unlisted_width() {
        assert!(Bandwidth::try_from(320).is_err());
        assert_eq!(Bandwidth::try_from(80).unwrap(), Bandwidth::Mhz80);
    }

    #[test]
    fn network_is_deterministic() {
        let cfg = NetworkConfig::default();
        let a = build_network(&cfg, 7).unwrap().to_json().unwrap();
        let b = build_network(&cfg, 7).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let round = Network::from_json(&a).unwrap();
        assert_eq!(round.to_json().unwrap(), a);
    }

    #[test]
    fn network_u1_population_and_placement() {
        let cfg = NetworkConfig::default();
        for seed in 0..20 {
            let net = build_network(&cfg, seed).unwrap();
            assert!((75..=100).contains(&net.stations.len()));
            for ap in &net.aps {
                let n = ap.stations.len();
                let far = (0.8 * n as f64).round() as usize;
                let close_in = ap.stations.iter().filter(|&&s| net.station(s).distance_m <= 3.0).count();
                assert!(close_in >= n - far);
                for &s in &ap.stations {
                    let st = net.station(s);
                    assert_eq!(st.ap, ap.id);
                    assert!((1.0..=8.0).contains(&st.distance_m));
                    for band in BandId::ALL {
                        if !st.capability.supports(band) {
                            assert_eq!(st.rate(band), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_capability_mix() {
        let cfg = NetworkConfig { capability_mix: [0.0, 0.0, 1.0], ..Default::default() };
        let net = build_network(&cfg, 3).unwrap();
        assert!(net.stations.iter().all(|s| s.capability.n_f() == 3));
    }

    #[test]
    fn empty_network_is_rejected() {
        let cfg = NetworkConfig { num_aps: 0, ..Default::default() };
        assert!(build_network(&cfg, 0).is_err());
        let cfg = NetworkConfig { stations_per_ap: UniformCount { min: 0, max: 0 }, ..Default::default() };
        assert!(build_network(&cfg, 0).is_err());
    }
}
