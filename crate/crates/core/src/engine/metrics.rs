use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::traffic::FlowType;

/// Drop ratio right after one allocation decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub ap: usize,
    pub policy: String,
    pub d: f64,
}

/// Satisfaction of a flow that completed inside the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t_end: f64,
    pub flow_type: FlowType,
    pub fs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub decisions: Vec<DecisionRecord>,
    pub flows: Vec<FlowRecord>,
}

/// Figure-level numbers of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Summary {
    pub TDR_mean: f64,
    /// Keyed by type name; types without completed flows are omitted.
    pub FS_mean_by_type: BTreeMap<String, f64>,
    pub decisions: usize,
    pub completed_flows: usize,
}

impl MetricsLedger {
    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty() && self.flows.is_empty()
    }

    pub fn tdr_mean(&self) -> f64 {
        if self.decisions.is_empty() {
            return 0.0;
        }
        self.decisions.iter().map(|r| r.d).sum::<f64>() / self.decisions.len() as f64
    }

    pub fn fs_mean(&self, flow_type: FlowType) -> Option<f64> {
        let (n, sum) = self
            .flows
            .iter()
            .filter(|f| f.flow_type == flow_type)
            .fold((0usize, 0.0), |(n, s), f| (n + 1, s + f.fs));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn summary(&self) -> Summary {
        let fs_mean_by_type = FlowType::ALL
            .iter()
            .filter_map(|&t| self.fs_mean(t).map(|m| (t.name().to_string(), m)))
            .collect();
        Summary {
            TDR_mean: self.tdr_mean(),
            FS_mean_by_type: fs_mean_by_type,
            decisions: self.decisions.len(),
            completed_flows: self.flows.len(),
        }
    }

    pub fn write_decisions<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,ap,policy,D")?;
        for r in &self.decisions {
            writeln!(out, "{},{},{},{}", r.t, r.ap, r.policy, r.d)?;
        }
        Ok(())
    }

    pub fn write_flows<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t_end,type,FS")?;
        for r in &self.flows {
            writeln!(out, "{},{},{}", r.t_end, r.flow_type, r.fs)?;
        }
        Ok(())
    }

    /// Rebuilds a ledger from the two delimited logs.
    pub fn read<R1: BufRead, R2: BufRead>(decisions: R1, flows: R2) -> Result<Self> {
        let bad = |line: &str| Error::Protocol(format!("malformed log line {line:?}"));
        let num = |s: &str, line: &str| s.parse::<f64>().map_err(|_| bad(line));
        let mut ledger = MetricsLedger::default();
        for line in decisions.lines().skip(1) {
            let line = line?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(&line));
            }
            ledger.decisions.push(DecisionRecord {
                t: num(cols[0], &line)?,
                ap: cols[1].parse().map_err(|_| bad(&line))?,
                policy: cols[2].to_string(),
                d: num(cols[3], &line)?,
            });
        }
        for line in flows.lines().skip(1) {
            let line = line?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(&line));
            }
            let flow_type = FlowType::ALL
                .into_iter()
                .find(|t| t.name() == cols[1])
                .ok_or_else(|| bad(&line))?;
            ledger.flows.push(FlowRecord { t_end: num(cols[0], &line)?, flow_type, fs: num(cols[2], &line)? });
        }
        Ok(ledger)
    }

    /// SHA-256 over both serialized logs, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        // Writing to a Vec cannot fail.
        self.write_decisions(&mut buf).expect("in-memory write");
        self.write_flows(&mut buf).expect("in-memory write");
        hex_digest(&buf)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsLedger {
        MetricsLedger {
            decisions: vec![
                DecisionRecord { t: 0.5, ap: 0, policy: "slci".into(), d: 0.0 },
                DecisionRecord { t: 1.25, ap: 1, policy: "slci".into(), d: 0.3 },
            ],
            flows: vec![
                FlowRecord { t_end: 3.0, flow_type: FlowType::Vr, fs: 0.5 },
                FlowRecord { t_end: 4.0, flow_type: FlowType::Vr, fs: 1.0 },
                FlowRecord { t_end: 4.5, flow_type: FlowType::Wb, fs: 0.9 },
            ],
        }
    }

    #[test]
    fn summary_values() {
        let s = sample().summary();
        assert!((s.TDR_mean - 0.15).abs() < 1e-12);
        assert_eq!(s.FS_mean_by_type["VR"], 0.75);
        assert_eq!(s.FS_mean_by_type.get("V4K"), None);
        assert_eq!(MetricsLedger::default().tdr_mean(), 0.0);
    }

    #[test]
    fn logs_reaggregate() {
        let ledger = sample();
        let (mut d, mut f) = (Vec::new(), Vec::new());
        ledger.write_decisions(&mut d).unwrap();
        ledger.write_flows(&mut f).unwrap();
        let back = MetricsLedger::read(&d[..], &f[..]).unwrap();
        assert_eq!(back, ledger);
        assert_eq!(back.content_hash(), ledger.content_hash());
    }
}
