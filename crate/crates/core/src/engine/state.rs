use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::topology::{AccessPoint, BandId, Network, Station};
use crate::traffic::Flow;

/// Load on one AP radio.
///
/// Each flow share `d` sent to a station whose link rate is `R` needs `d / R`
/// of the airtime. The interface capacity is the demand-weighted harmonic mean
/// of the recipients' rates, `L / sum(d / R)`, so the occupancy `L / C` is the
/// demanded airtime. When demand exceeds capacity every share on the interface
/// is scaled by `C / L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub band: BandId,
    /// Demand routed to stations that can be reached on this band, Mbps.
    pub load: f64,
    /// Demanded airtime fraction, unclipped.
    pub airtime: f64,
    /// Demand routed to stations with no usable rate here; always dropped.
    pub unreachable: f64,
    /// Reported capacity while nothing is scheduled.
    pub idle_capacity: f64,
}

impl InterfaceState {
    fn new(band: BandId, idle_capacity: f64) -> Self {
        Self { band, load: 0.0, airtime: 0.0, unreachable: 0.0, idle_capacity }
    }

    pub fn capacity(&self) -> f64 {
        if self.load > 0.0 {
            self.load / self.airtime
        } else {
            self.idle_capacity
        }
    }

    pub fn occupancy(&self) -> f64 {
        self.airtime.min(1.0)
    }

    /// Fraction of each share that is served.
    pub fn service_factor(&self) -> f64 {
        if self.airtime > 1.0 {
            1.0 / self.airtime
        } else {
            1.0
        }
    }

    pub fn served(&self) -> f64 {
        self.load * self.service_factor()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFlow {
    pub flow: Flow,
    /// Station link rate per band.
    pub link_rate: [f64; 3],
    /// Currently served rate per band.
    pub served: [f64; 3],
    /// Megabits delivered so far.
    pub delivered_mbit: f64,
    last_update: f64,
}

impl ActiveFlow {
    pub fn demand(&self, band: usize) -> f64 {
        self.flow.rate_mbps * self.flow.fractions[band]
    }

    pub fn served_total(&self) -> f64 {
        self.served.iter().sum()
    }
}

/// Result of placing one flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationOutcome {
    /// Rate served to the new flow, Mbps.
    pub served: f64,
    /// Rate of the new flow that is dropped, Mbps.
    pub dropped: f64,
    /// AP-wide drop ratio after the decision.
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedFlow {
    pub flow: Flow,
    pub satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApState {
    pub id: usize,
    /// Stations attached to this AP.
    pub n_stations: usize,
    pub interfaces: [InterfaceState; 3],
    /// Active flows in arrival order.
    flows: Vec<ActiveFlow>,
}

fn harmonic_mean(rates: impl Iterator<Item = f64>) -> f64 {
    let (n, inv) = rates.filter(|&r| r > 0.0).fold((0usize, 0.0), |(n, s), r| (n + 1, s + 1.0 / r));
    if n == 0 {
        0.0
    } else {
        n as f64 / inv
    }
}

impl ApState {
    pub fn new(ap: &AccessPoint, network: &Network) -> Self {
        let interfaces = BandId::ALL.map(|band| {
            let idle = harmonic_mean(ap.stations.iter().map(|&s| network.station(s).rate(band)));
            InterfaceState::new(band, idle)
        });
        Self { id: ap.id, n_stations: ap.stations.len(), interfaces, flows: Vec::new() }
    }

    pub fn flows(&self) -> &[ActiveFlow] {
        &self.flows
    }

    pub fn active_count(&self) -> usize {
        self.flows.len()
    }

    /// Share of attached stations currently receiving a flow.
    pub fn active_ratio(&self) -> f64 {
        if self.n_stations == 0 {
            0.0
        } else {
            self.flows.len() as f64 / self.n_stations as f64
        }
    }

    pub fn occupancies(&self) -> [f64; 3] {
        [self.interfaces[0].occupancy(), self.interfaces[1].occupancy(), self.interfaces[2].occupancy()]
    }

    /// Occupancies of the given bands, in order.
    pub fn occupancies_of(&self, bands: &[BandId]) -> Vec<f64> {
        bands.iter().map(|b| self.interfaces[b.index()].occupancy()).collect()
    }

    pub fn demanded(&self) -> f64 {
        self.flows.iter().map(|f| f.flow.rate_mbps).sum()
    }

    pub fn served(&self) -> f64 {
        self.flows.iter().map(ActiveFlow::served_total).sum()
    }

    /// Fraction of the demand of the active flows that is currently dropped.
    pub fn decision_drop_ratio(&self) -> f64 {
        let demanded = self.demanded();
        if demanded <= 0.0 {
            return 0.0;
        }
        ((demanded - self.served()) / demanded).clamp(0.0, 1.0)
    }

    /// Accrues delivered traffic up to `now`.
    fn advance(&mut self, now: f64) {
        for f in &mut self.flows {
            let dt = now - f.last_update;
            if dt > 0.0 {
                f.delivered_mbit += f.served_total() * dt;
                f.last_update = now;
            }
        }
    }

    fn recompute(&mut self) {
        for (b, iface) in self.interfaces.iter_mut().enumerate() {
            iface.load = 0.0;
            iface.airtime = 0.0;
            iface.unreachable = 0.0;
            for f in &self.flows {
                let d = f.demand(b);
                if d <= 0.0 {
                    continue;
                }
                if f.link_rate[b] > 0.0 {
                    iface.load += d;
                    iface.airtime += d / f.link_rate[b];
                } else {
                    iface.unreachable += d;
                }
            }
        }
        let factors = self.interfaces.clone().map(|i| i.service_factor());
        for f in &mut self.flows {
            for b in 0..3 {
                f.served[b] = if f.link_rate[b] > 0.0 { f.demand(b) * factors[b] } else { 0.0 };
            }
        }
    }

    /// Places `flow` on the station's interfaces. `fractions` is given over the
    /// station's supported bands, lowest first, and must sum to 1.
    pub fn apply_allocation(
        &mut self,
        mut flow: Flow,
        fractions: &[f64],
        station: &Station,
        now: f64,
    ) -> Result<AllocationOutcome> {
        let bands = station.capability.bands();
        if fractions.len() != bands.len() {
            return Err(contract(format!(
                "split has {} entries, station has {} interfaces",
                fractions.len(),
                bands.len()
            )));
        }
        if fractions.iter().any(|f| !(0.0..=1.0 + 1e-12).contains(f)) {
            return Err(contract(format!("split {fractions:?} has entries outside [0, 1]")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(contract(format!("split {fractions:?} sums to {sum}")));
        }
        if station.ap != self.id {
            return Err(contract(format!("station {} is not attached to AP {}", station.id, self.id)));
        }
        if self.flows.iter().any(|f| f.flow.station == station.id) {
            return Err(contract(format!("station {} already has an active flow", station.id)));
        }

        self.advance(now);
        flow.fractions = [0.0; 3];
        for (&band, &f) in bands.iter().zip(fractions) {
            flow.fractions[band.index()] = f;
        }
        let link_rate = BandId::ALL.map(|b| station.rate(b));
        let id = flow.id;
        let demand = flow.rate_mbps;
        self.flows.push(ActiveFlow { flow, link_rate, served: [0.0; 3], delivered_mbit: 0.0, last_update: now });
        self.recompute();

        let served = self.flows.iter().find(|f| f.flow.id == id).map_or(0.0, ActiveFlow::served_total);
        Ok(AllocationOutcome {
            served,
            dropped: (demand - served).max(0.0),
            drop_ratio: self.decision_drop_ratio(),
        })
    }

    /// Removes a finished flow. The freed airtime is handed back to the
    /// remaining flows, restoring previously dropped traffic up to capacity.
    pub fn rebalance_on_departure(&mut self, flow_id: u64, now: f64) -> Result<CompletedFlow> {
        let pos = self
            .flows
            .iter()
            .position(|f| f.flow.id == flow_id)
            .ok_or_else(|| contract(format!("flow {flow_id} is not active at AP {}", self.id)))?;
        self.advance(now);
        let done = self.flows.remove(pos);
        self.recompute();

        let lifetime = now - done.flow.arrival_s;
        let wanted = done.flow.rate_mbps * lifetime;
        let satisfaction = if wanted > 0.0 { (done.delivered_mbit / wanted).clamp(0.0, 1.0) } else { 1.0 };
        Ok(CompletedFlow { flow: done.flow, satisfaction })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::topology::{LinkState, StationCapability};
    use crate::traffic::FlowType;

    /// One AP whose stations see fixed per-band rates.
    pub(crate) fn toy_network(stations: &[(usize, [f64; 3])]) -> Network {
        let stations: Vec<Station> = stations
            .iter()
            .enumerate()
            .map(|(id, &(n_f, rates))| Station {
                id,
                ap: 0,
                position: [1.0, 0.0],
                distance_m: 1.0,
                capability: StationCapability::with_interfaces(n_f).unwrap(),
                links: rates.map(|r| LinkState { snr_db: 30.0, rate_mbps: r }),
            })
            .collect();
        let ids = (0..stations.len()).collect();
        Network {
            aps: vec![AccessPoint { id: 0, position: [0.0, 0.0], stations: ids }],
            stations,
            bandwidths: crate::topology::NetworkConfig::default().bandwidths,
        }
    }

    pub(crate) fn flow(id: u64, station: usize, rate: f64, t: f64) -> Flow {
        Flow {
            id,
            station,
            flow_type: FlowType::V4k,
            rate_mbps: rate,
            arrival_s: t,
            duration_s: 10.0,
            fractions: [0.0; 3],
        }
    }

    #[test]
    fn underloaded_flow_fully_served() {
        let net = toy_network(&[(3, [50.0, 50.0, 50.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        let out = ap.apply_allocation(flow(0, 0, 10.0, 0.0), &[1.0, 0.0, 0.0], net.station(0), 0.0).unwrap();
        assert_eq!((out.served, out.dropped, out.drop_ratio), (10.0, 0.0, 0.0));
        assert!((ap.occupancies()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn split_over_saturated_interfaces() {
        let net = toy_network(&[(2, [3.0, 3.0, 0.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        let out = ap.apply_allocation(flow(0, 0, 10.0, 0.0), &[0.5, 0.5], net.station(0), 0.0).unwrap();
        assert!((out.served - 6.0).abs() < 1e-12);
        assert!((out.dropped - 4.0).abs() < 1e-12);
        assert!((out.drop_ratio - 0.4).abs() < 1e-12);
        for iface in &ap.interfaces[..2] {
            assert!(iface.served() <= iface.capacity() + 1e-12);
        }
    }

    #[test]
    fn bad_splits_are_rejected() {
        let net = toy_network(&[(2, [3.0, 3.0, 0.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        let st = net.station(0);
        assert!(ap.apply_allocation(flow(0, 0, 1.0, 0.0), &[1.0, 0.0, 0.0], st, 0.0).is_err());
        assert!(ap.apply_allocation(flow(0, 0, 1.0, 0.0), &[0.6, 0.6], st, 0.0).is_err());
        assert!(ap.apply_allocation(flow(0, 0, 1.0, 0.0), &[1.2, -0.2], st, 0.0).is_err());
        assert!(ap.rebalance_on_departure(99, 1.0).is_err());
    }

    #[test]
    fn drop_ratio_edges() {
        let net = toy_network(&[(1, [10.0, 0.0, 0.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        assert_eq!(ap.decision_drop_ratio(), 0.0);
        let out = ap.apply_allocation(flow(0, 0, 20.0, 0.0), &[1.0], net.station(0), 0.0).unwrap();
        assert!((out.drop_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn departure_restores_dropped_traffic() {
        let net = toy_network(&[(1, [10.0, 0.0, 0.0]), (1, [10.0, 0.0, 0.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        ap.apply_allocation(flow(0, 0, 6.0, 0.0), &[1.0], net.station(0), 0.0).unwrap();
        ap.apply_allocation(flow(1, 1, 6.0, 0.0), &[1.0], net.station(1), 0.0).unwrap();
        assert!(ap.decision_drop_ratio() > 0.0);
        ap.rebalance_on_departure(0, 5.0).unwrap();
        assert_eq!(ap.decision_drop_ratio(), 0.0);
        assert!(ap.interfaces[0].served() <= ap.interfaces[0].capacity());
        ap.rebalance_on_departure(1, 6.0).unwrap();
        assert_eq!(ap.occupancies(), [0.0; 3]);
    }

    #[test]
    fn satisfaction_is_time_weighted() {
        // Flow A wants 10 on a 10-capacity link. B (also 10) joins at t=4 and
        // halves A's service; A leaves at t=10: (10*4 + 5*6) / 100 = 0.7.
        let net = toy_network(&[(1, [10.0, 0.0, 0.0]), (1, [10.0, 0.0, 0.0])]);
        let mut ap = ApState::new(&net.aps[0], &net);
        ap.apply_allocation(flow(0, 0, 10.0, 0.0), &[1.0], net.station(0), 0.0).unwrap();
        ap.apply_allocation(flow(1, 1, 10.0, 4.0), &[1.0], net.station(1), 4.0).unwrap();
        let done = ap.rebalance_on_departure(0, 10.0).unwrap();
        assert!((done.satisfaction - 0.7).abs() < 1e-12);
        let rest = ap.rebalance_on_departure(1, 14.0).unwrap();
        // 5 for 6 s then 10 for 4 s out of 10 s at 10.
        assert!((rest.satisfaction - 0.7).abs() < 1e-12);
    }
}
