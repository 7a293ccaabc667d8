use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sac::CurvePoint;

/// Trailing window of the smoothed curves, in decisions.
pub const SMOOTHING: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub reward: f64,
    pub tdr: f64,
}

/// Trailing means over the last `window` decisions (fewer at the start).
pub fn training_curves(points: &[CurvePoint], window: usize) -> Vec<CurveRow> {
    let window = window.max(1);
    let mut recent: VecDeque<(f64, f64)> = VecDeque::with_capacity(window);
    let (mut sum_r, mut sum_d) = (0.0, 0.0);
    points
        .iter()
        .map(|p| {
            if recent.len() == window {
                let (r, d) = recent.pop_front().expect("non-empty");
                sum_r -= r;
                sum_d -= d;
            }
            recent.push_back((p.reward, p.d_avg));
            sum_r += p.reward;
            sum_d += p.d_avg;
            let n = recent.len() as f64;
            CurveRow { step: p.step, reward: sum_r / n, tdr: sum_d / n }
        })
        .collect()
}

pub fn write_curve<W: Write>(mut out: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(out, "step,reward,tdr")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.step, r.reward, r.tdr)?;
    }
    Ok(())
}

pub fn write_training_log<W: Write>(mut out: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(out, "step,reward,d_avg")?;
    for p in points {
        writeln!(out, "{},{},{}", p.step, p.reward, p.d_avg)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_training_log<R: BufRead>(input: R) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for line in input.lines().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Protocol(format!("malformed training log line {line:?}"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        out.push(CurvePoint {
            step: cols[0].parse().map_err(|_| bad())?,
            reward: cols[1].parse().map_err(|_| bad())?,
            d_avg: cols[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
