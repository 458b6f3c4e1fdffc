//! Redundancy-based bad-data detection and identification.
//!
//! Every node whose injection and incident flows are all metered yields two
//! balance tests, and every zero-shunt branch with all four end flows (and,
//! for the second test, both voltage magnitudes) yields two branch tests.
//! Each test is a linear combination of measured signals (`|V|²` for voltage
//! readings) that vanishes for consistent data; a normalized value beyond the
//! threshold turns the whole combination into a suspect set. Identification
//! replaces one suspect per set by the value the violated identity implies,
//! re-estimates, and keeps the hypothesis that fits the remaining readings
//! best.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{
    estimate, measurement_residuals, AnchorNode, EstimateOptions, EstimationResult,
};
use crate::measurements::{
    measurements_to_records, Location, Measurement, MeasurementKind, MeasurementRecord, Provenance,
};
use crate::network::NetworkModel;
use crate::sdp::build_matrix_set;

/// Which redundancy identity a residual tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResidualKind {
    #[serde(rename = "node_P")]
    NodeP,
    #[serde(rename = "node_Q")]
    NodeQ,
    #[serde(rename = "branch_1")]
    Branch1,
    #[serde(rename = "branch_2")]
    Branch2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentityLocation {
    Node(usize),
    Branch(usize),
}

/// How the variance of the second branch residual is composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceComposition {
    /// Variances of the independent terms add.
    #[default]
    Additive,
    /// The voltage term is subtracted, floored at a tiny positive value.
    AsPrinted,
}

const VARIANCE_FLOOR: f64 = 1e-18;

/// One identity test: `u = Σ c_j g(z_j)` with `g(z) = z` for powers and
/// `z²` for voltage magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyResidual {
    pub kind: ResidualKind,
    pub location: IdentityLocation,
    pub u: f64,
    pub sigma: f64,
    pub normalized: f64,
    /// `(measurement index, coefficient)` of every participating signal.
    pub terms: Vec<(usize, f64)>,
}

impl RedundancyResidual {
    pub fn members(&self) -> Vec<usize> {
        self.terms.iter().map(|&(i, _)| i).collect()
    }
}

/// Measurements of a violated identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspectSet {
    pub trigger: RedundancyResidual,
    pub members: Vec<usize>,
}

/// The signal an identity term uses and its variance.
fn signal(m: &Measurement) -> (f64, f64) {
    if m.kind == MeasurementKind::Vmag {
        let s = 2.0 * m.value * m.sigma;
        (m.value * m.value, s * s)
    } else {
        (m.value, m.sigma * m.sigma)
    }
}

fn make_residual(
    kind: ResidualKind,
    location: IdentityLocation,
    terms: Vec<(usize, f64)>,
    measurements: &[Measurement],
    composition: VarianceComposition,
) -> RedundancyResidual {
    let mut u = 0.0;
    let mut var = 0.0;
    for &(i, c) in &terms {
        let (g, v) = signal(&measurements[i]);
        u += c * g;
        let subtract = composition == VarianceComposition::AsPrinted
            && measurements[i].kind == MeasurementKind::Vmag;
        var += if subtract { -c * c * v } else { c * c * v };
    }
    if var <= VARIANCE_FLOOR {
        log::warn!(
            "{kind:?} residual variance {var:.3e} is not positive; floored at {VARIANCE_FLOOR:e}"
        );
        var = VARIANCE_FLOOR;
    }
    let sigma = var.sqrt();
    RedundancyResidual {
        kind,
        location,
        u,
        sigma,
        normalized: u / sigma,
        terms,
    }
}

/// A reading removed before the residual tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefilterEntry {
    pub index: usize,
    pub reason: String,
}

/// Drops obviously invalid readings. Returns the kept measurements with
/// their original indices, and what was removed.
pub fn prefilter(
    measurements: &[Measurement],
) -> (Vec<Measurement>, Vec<usize>, Vec<PrefilterEntry>) {
    let mut kept = Vec::new();
    let mut index = Vec::new();
    let mut removed = Vec::new();
    for (i, m) in measurements.iter().enumerate() {
        let reason = if !m.value.is_finite() {
            Some("non-finite value".to_string())
        } else if !(m.sigma.is_finite() && m.sigma > 0.0) {
            Some(format!("sigma {} is not positive", m.sigma))
        } else if m.kind == MeasurementKind::Vmag && m.value <= 0.0 {
            Some(format!("voltage magnitude {} is not positive", m.value))
        } else {
            None
        };
        match reason {
            Some(reason) => {
                log::info!("removed measurement {i}: {reason}");
                removed.push(PrefilterEntry { index: i, reason });
            }
            None => {
                kept.push(*m);
                index.push(i);
            }
        }
    }
    (kept, index, removed)
}

/// All computable redundancy residuals, nodes first, then branches, in
/// index order.
pub fn compute_residuals(
    model: &NetworkModel,
    measurements: &[Measurement],
    composition: VarianceComposition,
) -> Vec<RedundancyResidual> {
    let mut slot: HashMap<(MeasurementKind, Location), usize> = HashMap::new();
    for (i, m) in measurements.iter().enumerate() {
        slot.entry((m.kind, m.location)).or_insert(i);
    }
    let find = |kind, loc| slot.get(&(kind, loc)).copied();
    let mut out = Vec::new();
    for k in 0..model.node_count() {
        for (inj, flow, kind) in [
            (
                MeasurementKind::PInj,
                MeasurementKind::PFlow,
                ResidualKind::NodeP,
            ),
            (
                MeasurementKind::QInj,
                MeasurementKind::QFlow,
                ResidualKind::NodeQ,
            ),
        ] {
            let Some(i) = find(inj, Location::Node(k)) else {
                continue;
            };
            let mut terms = vec![(i, 1.0)];
            let complete = model.incident_branches(k).iter().all(|&b| {
                let other = model.branches[b].other_end(k);
                match find(flow, Location::Branch { from: k, to: other }) {
                    Some(j) => {
                        terms.push((j, 1.0));
                        true
                    }
                    None => false,
                }
            });
            if complete {
                out.push(make_residual(
                    kind,
                    IdentityLocation::Node(k),
                    terms,
                    measurements,
                    composition,
                ));
            }
        }
    }
    for (b, branch) in model.closed_branches() {
        if branch.has_shunt() {
            continue;
        }
        let (l, m) = (branch.from_node, branch.to_node);
        let y = model.ybus.get(l, m);
        let (g, s) = (y.re, y.im);
        let fwd = Location::Branch { from: l, to: m };
        let rev = Location::Branch { from: m, to: l };
        let flows = (
            find(MeasurementKind::PFlow, fwd),
            find(MeasurementKind::PFlow, rev),
            find(MeasurementKind::QFlow, fwd),
            find(MeasurementKind::QFlow, rev),
        );
        let (Some(plm), Some(pml), Some(qlm), Some(qml)) = flows else {
            continue;
        };
        out.push(make_residual(
            ResidualKind::Branch1,
            IdentityLocation::Branch(b),
            vec![(plm, s), (pml, s), (qlm, g), (qml, g)],
            measurements,
            composition,
        ));
        if let (Some(vl), Some(vm)) = (
            find(MeasurementKind::Vmag, Location::Node(l)),
            find(MeasurementKind::Vmag, Location::Node(m)),
        ) {
            let y2 = y.norm_sqr();
            out.push(make_residual(
                ResidualKind::Branch2,
                IdentityLocation::Branch(b),
                vec![
                    (plm, g),
                    (pml, -g),
                    (qlm, -s),
                    (qml, s),
                    (vl, -y2),
                    (vm, y2),
                ],
                measurements,
                composition,
            ));
        }
    }
    out
}

/// One suspect set per residual whose normalized value exceeds `threshold`.
pub fn detect(residuals: &[RedundancyResidual], threshold: f64) -> Result<Vec<SuspectSet>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Schema(format!(
            "detection threshold {threshold} must be positive"
        )));
    }
    Ok(residuals
        .iter()
        .filter(|r| r.normalized.abs() > threshold)
        .map(|r| SuspectSet {
            trigger: r.clone(),
            members: r.members(),
        })
        .collect())
}

/// The value (and σ) of `target` implied by the identity and the other
/// members' readings. `None` when the target's coefficient vanishes or a
/// voltage would come out non-positive.
pub fn implied_reading(
    identity: &RedundancyResidual,
    target: usize,
    measurements: &[Measurement],
) -> Option<Measurement> {
    let &(_, ct) = identity.terms.iter().find(|&&(i, _)| i == target)?;
    if ct == 0.0 {
        return None;
    }
    let mut rest = 0.0;
    let mut var = 0.0;
    for &(i, c) in identity.terms.iter().filter(|&&(i, _)| i != target) {
        let (g, v) = signal(&measurements[i]);
        rest += c * g;
        var += c * c * v;
    }
    let g = -rest / ct;
    let var_g = var / (ct * ct);
    let mut m = measurements[target];
    if m.kind == MeasurementKind::Vmag {
        if g <= 0.0 {
            return None;
        }
        m.value = g.sqrt();
        m.sigma = var_g.sqrt() / (2.0 * m.value);
    } else {
        m.value = g;
        m.sigma = var_g.sqrt();
    }
    if !(m.sigma > 0.0 && m.sigma.is_finite()) {
        return None;
    }
    Some(m.with_provenance(Provenance::Pseudo))
}

/// `Σ (z_i − ẑ_i)²/σ_i²` over the measurements not in `excluded`.
pub fn fit_error(
    model: &NetworkModel,
    measurements: &[Measurement],
    excluded: &BTreeSet<usize>,
    state: &[num_complex::Complex64],
) -> f64 {
    let set = build_matrix_set::<f64>(model);
    let kept: Vec<Measurement> = measurements
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .map(|(_, m)| *m)
        .collect();
    measurement_residuals(&set, &kept, state)
        .iter()
        .map(|r| r.normalized * r.normalized)
        .sum()
}

#[derive(Debug, Clone)]
pub struct BadDataOptions {
    pub threshold: f64,
    pub max_combinations: usize,
    pub composition: VarianceComposition,
}

impl Default for BadDataOptions {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_combinations: 256,
            composition: VarianceComposition::Additive,
        }
    }
}

/// Outcome of the detection/identification pipeline. Measurement indices
/// refer to the input list.
#[derive(Debug, Clone)]
pub struct BadDataOutcome {
    pub prefiltered: Vec<PrefilterEntry>,
    pub residuals: Vec<RedundancyResidual>,
    pub suspects: Vec<SuspectSet>,
    pub culprits: Vec<usize>,
    /// Replacement readings of the culprits, in the same order.
    pub replacements: Vec<Measurement>,
    pub combinations_evaluated: usize,
    /// Fit error of the winning hypothesis (`None` without suspects).
    pub fit_error: Option<f64>,
    pub result: EstimationResult,
}

/// Mixed-radix decoding of combination `index`.
fn combination(index: usize, radices: &[usize]) -> Vec<usize> {
    let mut rest = index;
    radices
        .iter()
        .map(|&r| {
            let d = rest % r;
            rest /= r;
            d
        })
        .collect()
}

struct Hypothesis {
    culprits: Vec<usize>,
    replacements: Vec<Measurement>,
    fit: f64,
    result: EstimationResult,
}

fn evaluate(
    model: &NetworkModel,
    kept: &[Measurement],
    suspects: &[SuspectSet],
    choice: &[usize],
    anchors: &[AnchorNode],
    options: &EstimateOptions,
) -> Option<Hypothesis> {
    let mut culprits = Vec::new();
    let mut replacements = Vec::new();
    for (set, &pick) in suspects.iter().zip(choice) {
        let target = set.members[pick];
        if culprits.contains(&target) {
            continue;
        }
        replacements.push(implied_reading(&set.trigger, target, kept)?);
        culprits.push(target);
    }
    let mut used = kept.to_vec();
    for (&c, r) in culprits.iter().zip(&replacements) {
        used[c] = *r;
    }
    let result = match estimate(model, &used, anchors, options) {
        Ok(r) => r,
        Err(e) => {
            log::info!("hypothesis {culprits:?} rejected: {e}");
            return None;
        }
    };
    let excluded: BTreeSet<usize> = culprits.iter().copied().collect();
    let fit = fit_error(model, kept, &excluded, &result.state);
    fit.is_finite().then_some(Hypothesis {
        culprits,
        replacements,
        fit,
        result,
    })
}

/// Detection, identification and final estimation.
pub fn run(
    model: &NetworkModel,
    measurements: &[Measurement],
    anchors: &[AnchorNode],
    estimate_options: &EstimateOptions,
    options: &BadDataOptions,
) -> Result<BadDataOutcome> {
    let (kept, index, prefiltered) = prefilter(measurements);
    let residuals = compute_residuals(model, &kept, options.composition);
    let suspects = detect(&residuals, options.threshold)?;
    let to_input = |r: &RedundancyResidual| RedundancyResidual {
        terms: r.terms.iter().map(|&(i, c)| (index[i], c)).collect(),
        ..r.clone()
    };
    let input_residuals: Vec<RedundancyResidual> = residuals.iter().map(to_input).collect();
    let input_suspects: Vec<SuspectSet> = suspects
        .iter()
        .map(|s| SuspectSet {
            trigger: to_input(&s.trigger),
            members: s.members.iter().map(|&i| index[i]).collect(),
        })
        .collect();

    if suspects.is_empty() {
        let result = estimate(model, &kept, anchors, estimate_options)?;
        return Ok(BadDataOutcome {
            prefiltered,
            residuals: input_residuals,
            suspects: input_suspects,
            culprits: Vec::new(),
            replacements: Vec::new(),
            combinations_evaluated: 0,
            fit_error: None,
            result,
        });
    }

    let radices: Vec<usize> = suspects.iter().map(|s| s.members.len()).collect();
    let total = radices
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .unwrap_or(usize::MAX);
    if total > options.max_combinations {
        return Err(Error::BudgetExceeded {
            combinations: total,
            cap: options.max_combinations,
        });
    }
    let evaluated: Vec<Option<Hypothesis>> = (0..total)
        .into_par_iter()
        .map(|c| {
            evaluate(
                model,
                &kept,
                &suspects,
                &combination(c, &radices),
                anchors,
                estimate_options,
            )
        })
        .collect();
    let best = evaluated
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.fit < a.fit { b } else { a })
        .ok_or_else(|| {
            Error::Solver(format!(
                "all {total} bad-data hypotheses failed to estimate"
            ))
        })?;
    Ok(BadDataOutcome {
        prefiltered,
        residuals: input_residuals,
        suspects: input_suspects,
        culprits: best.culprits.iter().map(|&i| index[i]).collect(),
        replacements: best.replacements,
        combinations_evaluated: total,
        fit_error: Some(best.fit),
        result: best.result,
    })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IdentityRecord {
    Node {
        bus: String,
        phase: crate::network::Phase,
    },
    Branch {
        branch: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRecord {
    pub kind: ResidualKind,
    pub location: IdentityRecord,
    pub u: f64,
    pub sigma: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberRecord {
    pub index: usize,
    #[serde(flatten)]
    pub measurement: MeasurementRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuspectRecord {
    pub trigger: ResidualRecord,
    pub members: Vec<MemberRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CulpritRecord {
    pub index: usize,
    pub measured: MeasurementRecord,
    pub replacement: MeasurementRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct BadDataReport {
    pub prefiltered: Vec<PrefilterEntry>,
    pub residuals: Vec<ResidualRecord>,
    pub suspects: Vec<SuspectRecord>,
    pub culprits: Vec<CulpritRecord>,
    pub combinations_evaluated: usize,
    pub fit_error: Option<f64>,
}

fn residual_record(model: &NetworkModel, r: &RedundancyResidual) -> ResidualRecord {
    let location = match r.location {
        IdentityLocation::Node(k) => {
            let n = &model.nodes[k];
            IdentityRecord::Node {
                bus: model.buses[n.bus].id.clone(),
                phase: n.phase,
            }
        }
        IdentityLocation::Branch(b) => IdentityRecord::Branch {
            branch: model.branches[b].id.clone(),
        },
    };
    ResidualRecord {
        kind: r.kind,
        location,
        u: r.u,
        sigma: r.sigma,
        normalized: r.normalized,
    }
}

impl BadDataOutcome {
    pub fn report(&self, model: &NetworkModel, measurements: &[Measurement]) -> BadDataReport {
        let record =
            |m: &Measurement| measurements_to_records(model, std::slice::from_ref(m)).remove(0);
        BadDataReport {
            prefiltered: self.prefiltered.clone(),
            residuals: self
                .residuals
                .iter()
                .map(|r| residual_record(model, r))
                .collect(),
            suspects: self
                .suspects
                .iter()
                .map(|s| SuspectRecord {
                    trigger: residual_record(model, &s.trigger),
                    members: s
                        .members
                        .iter()
                        .map(|&i| MemberRecord {
                            index: i,
                            measurement: record(&measurements[i]),
                        })
                        .collect(),
                })
                .collect(),
            culprits: self
                .culprits
                .iter()
                .zip(&self.replacements)
                .map(|(&i, r)| CulpritRecord {
                    index: i,
                    measured: record(&measurements[i]),
                    replacement: record(r),
                })
                .collect(),
            combinations_evaluated: self.combinations_evaluated,
            fit_error: self.fit_error,
        }
    }
}
