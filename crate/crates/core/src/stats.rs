//! Estimation error statistics against a reference state: RMS, average and
//! maximum absolute error per quantity, and decade histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::StateRecord;
use crate::network::Phase;

/// Lowest decade edge: bins are `[10^k, 10^(k+1))` for `k = −6 … −1`.
pub const LOWEST_DECADE: i32 = -6;
pub const DECADES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Counts of absolute errors per decade; errors below the lowest edge and at
/// or above 1 go to the under- and overflow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub underflow: usize,
    pub bins: Vec<HistogramBin>,
    pub overflow: usize,
}

impl Histogram {
    pub fn of(errors: &[f64]) -> Self {
        let mut bins: Vec<HistogramBin> = (0..DECADES as i32)
            .map(|k| HistogramBin {
                lower: 10f64.powi(LOWEST_DECADE + k),
                upper: 10f64.powi(LOWEST_DECADE + k + 1),
                count: 0,
            })
            .collect();
        let (mut underflow, mut overflow) = (0, 0);
        for &e in errors {
            if e < bins[0].lower {
                underflow += 1;
            } else if e >= bins[DECADES - 1].upper {
                overflow += 1;
            } else {
                // edges compared directly so that exact powers of ten land in
                // the bin they open
                let bin = bins
                    .iter_mut()
                    .find(|b| e >= b.lower && e < b.upper)
                    .expect("inside the range");
                bin.count += 1;
            }
        }
        Histogram {
            underflow,
            bins,
            overflow,
        }
    }

    pub fn total(&self) -> usize {
        self.underflow + self.overflow + self.bins.iter().map(|b| b.count).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub rms: f64,
    pub average: f64,
    pub maximum: f64,
    pub histogram: Histogram,
}

impl QuantityStats {
    pub fn of(errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        QuantityStats {
            rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            average: errors.iter().sum::<f64>() / n,
            maximum: errors.iter().copied().fold(0.0, f64::max),
            histogram: Histogram::of(errors),
        }
    }
}

/// Magnitude errors in pu, angle errors in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub nodes: usize,
    pub vmag_pu: QuantityStats,
    pub angle_deg: QuantityStats,
}

/// Wraps an angle difference into `(−180°, 180°]`.
pub fn wrap_degrees(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Statistics of `estimate` against `truth`, matched by node.
pub fn error_stats(estimate: &[StateRecord], truth: &[StateRecord]) -> Result<ErrorStats> {
    let index =
        |records: &[StateRecord], what: &str| -> Result<BTreeMap<(String, Phase), (f64, f64)>> {
            let mut map = BTreeMap::new();
            for r in records {
                if map
                    .insert((r.bus.clone(), r.phase), (r.mag_pu, r.angle_deg))
                    .is_some()
                {
                    return Err(Error::NodeSetMismatch(format!(
                        "{what} lists {}.{} twice",
                        r.bus, r.phase
                    )));
                }
            }
            Ok(map)
        };
    let est = index(estimate, "estimate")?;
    let tru = index(truth, "truth")?;
    if let Some((b, p)) = est.keys().find(|k| !tru.contains_key(*k)) {
        return Err(Error::NodeSetMismatch(format!(
            "{b}.{p} is in the estimate but not in the truth"
        )));
    }
    if let Some((b, p)) = tru.keys().find(|k| !est.contains_key(*k)) {
        return Err(Error::NodeSetMismatch(format!(
            "{b}.{p} is in the truth but not in the estimate"
        )));
    }
    let mut dv = Vec::with_capacity(est.len());
    let mut da = Vec::with_capacity(est.len());
    for (key, (m, a)) in &est {
        let (mt, at) = tru[key];
        dv.push((m - mt).abs());
        da.push(wrap_degrees(a - at).abs());
    }
    Ok(ErrorStats {
        nodes: est.len(),
        vmag_pu: QuantityStats::of(&dv),
        angle_deg: QuantityStats::of(&da),
    })
}

impl ErrorStats {
    /// `quantity,lower,upper,count` rows; under- and overflow rows leave the
    /// open edge empty.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("quantity,lower,upper,count\n");
        for (name, q) in [("vmag_pu", &self.vmag_pu), ("angle_deg", &self.angle_deg)] {
            let h = &q.histogram;
            let _ = writeln!(out, "{name},,{:e},{}", h.bins[0].lower, h.underflow);
            for b in &h.bins {
                let _ = writeln!(out, "{name},{:e},{:e},{}", b.lower, b.upper, b.count);
            }
            let _ = writeln!(
                out,
                "{name},{:e},,{}",
                h.bins[DECADES - 1].upper,
                h.overflow
            );
        }
        out
    }
}
