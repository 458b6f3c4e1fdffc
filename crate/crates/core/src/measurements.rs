//! Measurement data model, seeded synthesis and far-end pseudo-measurements.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{adjacency, Branch, NetworkModel, Phase};
use crate::rng::{sub_seed, SplitMix64};
use crate::sdp::{build_matrix_set, MeasurementMatrixSet, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasurementKind {
    #[serde(rename = "P_inj")]
    PInj,
    #[serde(rename = "Q_inj")]
    QInj,
    #[serde(rename = "P_flow")]
    PFlow,
    #[serde(rename = "Q_flow")]
    QFlow,
    #[serde(rename = "Vmag")]
    Vmag,
}

impl MeasurementKind {
    pub fn is_flow(self) -> bool {
        matches!(self, MeasurementKind::PFlow | MeasurementKind::QFlow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Pseudo,
    ZeroInjection,
}

/// Where a measurement sits: a node, or the `from` end of branch `from–to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Node(usize),
    Branch { from: usize, to: usize },
}

/// One scalar reading in per-unit. Voltage magnitudes hold the magnitude
/// reading; squaring happens at problem assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: Location,
    pub value: f64,
    pub sigma: f64,
    pub provenance: Provenance,
}

impl Measurement {
    pub fn at_node(kind: MeasurementKind, node: usize, value: f64, sigma: f64) -> Self {
        Self {
            kind,
            location: Location::Node(node),
            value,
            sigma,
            provenance: Provenance::Real,
        }
    }

    pub fn on_branch(
        kind: MeasurementKind,
        from: usize,
        to: usize,
        value: f64,
        sigma: f64,
    ) -> Self {
        Self {
            kind,
            location: Location::Branch { from, to },
            value,
            sigma,
            provenance: Provenance::Real,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn node(&self) -> Option<usize> {
        match self.location {
            Location::Node(k) => Some(k),
            Location::Branch { .. } => None,
        }
    }

    pub fn branch_end(&self) -> Option<(usize, usize)> {
        match self.location {
            Location::Branch { from, to } => Some((from, to)),
            Location::Node(_) => None,
        }
    }
}

/// Noise-free value of a measurement function at a known state; voltage
/// magnitudes are returned as magnitudes.
pub fn exact_value(
    set: &MeasurementMatrixSet<f64>,
    kind: MeasurementKind,
    location: Location,
    state: &StateVector<f64>,
) -> Option<f64> {
    let a = set.matrix_for(kind, location)?;
    let v = a.quad(&state.x);
    Some(if kind == MeasurementKind::Vmag {
        v.max(0.0).sqrt()
    } else {
        v
    })
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub kind: MeasurementKind,
    pub bus: String,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_bus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_phase: Option<Phase>,
    pub value: f64,
    pub sigma: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub bus: String,
    pub phase: Phase,
    pub mag_pu: f64,
    pub angle_deg: f64,
}

fn lookup(model: &NetworkModel, bus: &str, phase: Phase) -> Result<usize> {
    model
        .node_index(bus, phase)
        .ok_or_else(|| Error::Schema(format!("unknown node {bus}.{phase}")))
}

/// Resolves file records against a network. Flow records must name a
/// closed branch end; node records must not carry a far end.
pub fn measurements_from_records(
    model: &NetworkModel,
    records: &[MeasurementRecord],
) -> Result<Vec<Measurement>> {
    records
        .iter()
        .map(|r| {
            let node = lookup(model, &r.bus, r.phase)?;
            let location = if r.kind.is_flow() {
                let (Some(to_bus), Some(to_phase)) = (&r.to_bus, r.to_phase) else {
                    return Err(Error::Schema(format!(
                        "flow measurement at {}.{} lacks to_bus/to_phase",
                        r.bus, r.phase
                    )));
                };
                let to = lookup(model, to_bus, to_phase)?;
                if model.branch_between(node, to).is_none() {
                    return Err(Error::Schema(format!(
                        "no closed branch between {}.{} and {to_bus}.{to_phase}",
                        r.bus, r.phase
                    )));
                }
                Location::Branch { from: node, to }
            } else {
                if r.to_bus.is_some() || r.to_phase.is_some() {
                    return Err(Error::Schema(format!(
                        "node measurement at {}.{} must not name a far end",
                        r.bus, r.phase
                    )));
                }
                Location::Node(node)
            };
            Ok(Measurement {
                kind: r.kind,
                location,
                value: r.value,
                sigma: r.sigma,
                provenance: r.provenance,
            })
        })
        .collect()
}

pub fn measurements_to_records(
    model: &NetworkModel,
    measurements: &[Measurement],
) -> Vec<MeasurementRecord> {
    let name = |k: usize| {
        let n = &model.nodes[k];
        (model.buses[n.bus].id.clone(), n.phase)
    };
    measurements
        .iter()
        .map(|m| {
            let (node, far) = match m.location {
                Location::Node(k) => (k, None),
                Location::Branch { from, to } => (from, Some(to)),
            };
            let (bus, phase) = name(node);
            let far = far.map(name);
            MeasurementRecord {
                kind: m.kind,
                bus,
                phase,
                to_bus: far.as_ref().map(|f| f.0.clone()),
                to_phase: far.map(|f| f.1),
                value: m.value,
                sigma: m.sigma,
                provenance: m.provenance,
            }
        })
        .collect()
}

pub fn parse_measurements(model: &NetworkModel, text: &str) -> Result<Vec<Measurement>> {
    let records: Vec<MeasurementRecord> =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    measurements_from_records(model, &records)
}

/// Resolves a state file; every node must appear exactly once.
pub fn state_from_records(model: &NetworkModel, records: &[StateRecord]) -> Result<Vec<Complex64>> {
    let mut v = vec![None; model.node_count()];
    for r in records {
        let k = model
            .node_index(&r.bus, r.phase)
            .ok_or_else(|| Error::NodeSetMismatch(format!("unknown node {}.{}", r.bus, r.phase)))?;
        if v[k].is_some() {
            return Err(Error::NodeSetMismatch(format!(
                "node {}.{} listed twice",
                r.bus, r.phase
            )));
        }
        if !(r.mag_pu.is_finite() && r.angle_deg.is_finite()) {
            return Err(Error::Schema(format!(
                "non-finite state at {}.{}",
                r.bus, r.phase
            )));
        }
        v[k] = Some(Complex64::from_polar(r.mag_pu, r.angle_deg.to_radians()));
    }
    let missing: Vec<String> = (0..v.len())
        .filter(|&k| v[k].is_none())
        .map(|k| model.node_label(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::NodeSetMismatch(format!("missing nodes {missing:?}")));
    }
    Ok(v.into_iter().flatten().collect())
}

pub fn state_to_records(model: &NetworkModel, v: &[Complex64]) -> Vec<StateRecord> {
    model
        .nodes
        .iter()
        .zip(v)
        .map(|(n, p)| StateRecord {
            bus: model.buses[n.bus].id.clone(),
            phase: n.phase,
            mag_pu: p.norm(),
            angle_deg: p.arg().to_degrees(),
        })
        .collect()
}

pub fn parse_state(model: &NetworkModel, text: &str) -> Result<Vec<Complex64>> {
    let records: Vec<StateRecord> =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    state_from_records(model, &records)
}

// ---------------------------------------------------------------------------
// Placement and noise

/// Which signals to synthesise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementPlan {
    /// Nodes with P and Q injection meters.
    pub injections: Vec<usize>,
    /// Directed branch ends `(l, m)` with P and Q flow meters at `l`.
    pub flows: Vec<(usize, usize)>,
    /// Nodes with voltage-magnitude meters.
    pub vmag: Vec<usize>,
}

/// Breadth-first bus depth from the feeder head.
pub fn bus_depths(model: &NetworkModel) -> Vec<usize> {
    let adj = adjacency(model);
    let mut depth = vec![usize::MAX; model.buses.len()];
    let head = model.feeder_head();
    depth[head] = 0;
    let mut queue = VecDeque::from([head]);
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                queue.push_back(j);
            }
        }
    }
    depth
}

impl MeasurementPlan {
    /// Every injection, both ends of every closed branch, every magnitude.
    pub fn full(model: &NetworkModel) -> Self {
        let nodes: Vec<usize> = (0..model.node_count()).collect();
        let flows = model
            .closed_branches()
            .flat_map(|(_, b)| [(b.from_node, b.to_node), (b.to_node, b.from_node)])
            .collect();
        Self {
            injections: nodes.clone(),
            flows,
            vmag: nodes,
        }
    }

    /// Flows metered at the end nearer the feeder head only, injections at the
    /// feeder head, and magnitudes at the feeder head plus `vmag_buses`.
    pub fn one_sided(model: &NetworkModel, vmag_buses: &[usize]) -> Self {
        let depth = bus_depths(model);
        let flows = model
            .closed_branches()
            .map(|(_, b)| {
                let (df, dt) = (
                    depth[model.nodes[b.from_node].bus],
                    depth[model.nodes[b.to_node].bus],
                );
                if dt < df {
                    (b.to_node, b.from_node)
                } else {
                    (b.from_node, b.to_node)
                }
            })
            .collect();
        let head = model.feeder_head();
        let mut vmag: Vec<usize> = model.buses[head].nodes.clone();
        for &b in vmag_buses {
            for &k in &model.buses[b].nodes {
                if !vmag.contains(&k) {
                    vmag.push(k);
                }
            }
        }
        Self {
            injections: model.buses[head].nodes.clone(),
            flows,
            vmag,
        }
    }

    /// Measurement slots in synthesis order.
    pub fn slots(&self) -> Vec<(MeasurementKind, Location)> {
        let mut out =
            Vec::with_capacity(2 * self.injections.len() + 2 * self.flows.len() + self.vmag.len());
        for &k in &self.injections {
            out.push((MeasurementKind::PInj, Location::Node(k)));
            out.push((MeasurementKind::QInj, Location::Node(k)));
        }
        for &(l, m) in &self.flows {
            out.push((MeasurementKind::PFlow, Location::Branch { from: l, to: m }));
            out.push((MeasurementKind::QFlow, Location::Branch { from: l, to: m }));
        }
        for &k in &self.vmag {
            out.push((MeasurementKind::Vmag, Location::Node(k)));
        }
        out
    }
}

/// Per-kind standard deviations in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaTable {
    pub injection: f64,
    pub vmag: f64,
    pub flow: f64,
}

impl SigmaTable {
    /// Nominal meter accuracies used to weight measurements.
    pub const NOMINAL: SigmaTable = SigmaTable {
        injection: 0.015,
        vmag: 0.01,
        flow: 0.02,
    };

    pub fn for_kind(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::PInj | MeasurementKind::QInj => self.injection,
            MeasurementKind::PFlow | MeasurementKind::QFlow => self.flow,
            MeasurementKind::Vmag => self.vmag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NoiseLevel {
    L0,
    L1,
    L2,
    L3,
    L4,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 5] = [
        NoiseLevel::L0,
        NoiseLevel::L1,
        NoiseLevel::L2,
        NoiseLevel::L3,
        NoiseLevel::L4,
    ];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(usize::from(i)).copied()
    }

    /// Noise standard deviations of the level; each level is ten times the
    /// previous one and level 0 is noise-free.
    pub fn sigmas(self) -> SigmaTable {
        let scale = match self {
            NoiseLevel::L0 => 0.0,
            NoiseLevel::L1 => 1e-3,
            NoiseLevel::L2 => 1e-2,
            NoiseLevel::L3 => 1e-1,
            NoiseLevel::L4 => 1.0,
        };
        SigmaTable {
            injection: 0.015 * scale,
            vmag: 0.01 * scale,
            flow: 0.02 * scale,
        }
    }
}

/// Noise model of a synthesis run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviations of the drawn noise (zero entries draw nothing).
    pub sigmas: SigmaTable,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn level(level: NoiseLevel, seed: u64) -> Self {
        Self {
            sigmas: level.sigmas(),
            seed,
        }
    }

    /// The σ recorded on a synthesised measurement: the noise σ when
    /// positive, otherwise the nominal meter accuracy, so noise-free
    /// readings still carry a usable weight.
    pub fn recorded_sigma(&self, kind: MeasurementKind) -> f64 {
        let s = self.sigmas.for_kind(kind);
        if s > 0.0 {
            s
        } else {
            SigmaTable::NOMINAL.for_kind(kind)
        }
    }
}

/// `z_i = h_i(X_true) + σ_i·ξ_i` for every plan slot, with ξ drawn from the
/// seeded stream in slot order.
pub fn synthesize(
    model: &NetworkModel,
    truth: &[Complex64],
    plan: &MeasurementPlan,
    noise: &NoiseSpec,
) -> Result<Vec<Measurement>> {
    if truth.len() != model.node_count() {
        return Err(Error::DimensionMismatch {
            expected: model.node_count(),
            found: truth.len(),
        });
    }
    for s in [noise.sigmas.injection, noise.sigmas.vmag, noise.sigmas.flow] {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Schema(format!(
                "noise sigma must be non-negative, got {s}"
            )));
        }
    }
    let set = build_matrix_set::<f64>(model);
    let state = StateVector::from_phasors(truth);
    let mut rng = SplitMix64::new(sub_seed(noise.seed, "measurement-noise"));
    plan.slots()
        .into_iter()
        .map(|(kind, location)| {
            let exact = exact_value(&set, kind, location, &state).ok_or_else(|| {
                Error::Schema(format!(
                    "placement references unknown location {location:?}"
                ))
            })?;
            let xi = rng.next_gaussian();
            let value = exact + noise.sigmas.for_kind(kind) * xi;
            Ok(Measurement {
                kind,
                location,
                value,
                sigma: noise.recorded_sigma(kind),
                provenance: Provenance::Real,
            })
        })
        .collect()
}

/// Zero P and Q injection at every node of the listed buses.
pub fn add_zero_injection(model: &NetworkModel, buses: &[usize], sigma: f64) -> Vec<Measurement> {
    buses
        .iter()
        .flat_map(|&b| model.buses[b].nodes.iter().copied())
        .flat_map(|k| {
            [MeasurementKind::PInj, MeasurementKind::QInj].map(|kind| {
                Measurement::at_node(kind, k, 0.0, sigma).with_provenance(Provenance::ZeroInjection)
            })
        })
        .collect()
}

/// Default σ of zero-injection pseudo-readings.
pub const ZERO_INJECTION_SIGMA: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Pseudo-measurements

/// Variance inflation for pseudo-readings whose relation is only approximate.
pub const PSEUDO_SIGMA_FACTOR: f64 = 1000.0;

/// Smallest σ given to a pseudo-reading whose variance bound collapses.
const PSEUDO_SIGMA_FLOOR: f64 = 1e-8;

fn far_end(m: &Measurement) -> Result<(usize, usize)> {
    m.branch_end()
        .map(|(l, k)| (k, l))
        .ok_or_else(|| Error::Schema("pseudo-measurement source must be a flow".into()))
}

fn branch_of(model: &NetworkModel, l: usize, m: usize) -> Result<&Branch> {
    model
        .branch_between(l, m)
        .map(|b| &model.branches[b])
        .ok_or_else(|| Error::Schema(format!("no closed branch between nodes {l} and {m}")))
}

fn ensure_far_end_absent(
    model: &NetworkModel,
    measurements: &[Measurement],
    source: &Measurement,
) -> Result<()> {
    let (m, l) = far_end(source)?;
    let present = measurements
        .iter()
        .any(|x| x.kind.is_flow() && x.branch_end() == Some((m, l)));
    if present {
        Err(Error::BothEndsPresent(branch_of(model, l, m)?.id.clone()))
    } else {
        Ok(())
    }
}

/// Far-end flow of a lossless line: `P_ji = −P_ij` (or `Q_ji = −Q_ij`). The σ
/// is kept when the relation is exact for the quantity (zero resistance for
/// P, zero reactance for Q) and inflated otherwise.
pub fn pseudo_negate(
    model: &NetworkModel,
    measurements: &[Measurement],
    source: &Measurement,
) -> Result<Measurement> {
    ensure_far_end_absent(model, measurements, source)?;
    let (m, l) = far_end(source)?;
    let b = branch_of(model, l, m)?;
    let exact = match source.kind {
        MeasurementKind::PFlow => b.resistance() == 0.0,
        MeasurementKind::QFlow => b.reactance() == 0.0,
        _ => unreachable!("far_end accepted a non-flow"),
    };
    let sigma = if exact {
        source.sigma
    } else {
        PSEUDO_SIGMA_FACTOR * source.sigma
    };
    Ok(
        Measurement::on_branch(source.kind, m, l, -source.value, sigma)
            .with_provenance(Provenance::Pseudo),
    )
}

/// `P_ji` from a historical efficiency: `−P_ij/η` when `P_ij ≥ 0`, else `−η·P_ij`.
pub fn efficiency_value(p_ij: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::EfficiencyOutOfRange(eta));
    }
    Ok(if p_ij >= 0.0 {
        -p_ij / eta
    } else {
        -eta * p_ij
    })
}

pub fn pseudo_efficiency(
    model: &NetworkModel,
    measurements: &[Measurement],
    source: &Measurement,
    eta: f64,
) -> Result<Measurement> {
    let value = efficiency_value(source.value, eta)?;
    if source.kind != MeasurementKind::PFlow {
        return Err(Error::Schema(
            "efficiency pseudo-readings need an active-power flow".into(),
        ));
    }
    ensure_far_end_absent(model, measurements, source)?;
    let (m, l) = far_end(source)?;
    Ok(Measurement::on_branch(
        MeasurementKind::PFlow,
        m,
        l,
        value,
        PSEUDO_SIGMA_FACTOR * source.sigma,
    )
    .with_provenance(Provenance::Pseudo))
}

/// `P_ji = −P_ij − r (P_ij² + Q_ij²)/|V_i|²`.
pub fn analytic_value(p_ij: f64, q_ij: f64, v_i: f64, r: f64) -> f64 {
    -p_ij - r * (p_ij * p_ij + q_ij * q_ij) / (v_i * v_i)
}

/// Readings and deviations entering the analytic far-end estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticInputs {
    pub p: f64,
    pub sigma_p: f64,
    pub q: f64,
    pub sigma_q: f64,
    pub v: f64,
    pub sigma_v: f64,
    pub r: f64,
}

/// Upper bound on `var(P_ji)` for the analytic estimate, or `None` when
/// `|V| − 3σ_V ≤ 0` makes the bounds on `1/|V|²` undefined.
///
/// Writing `P_ji = −P − r·S·U` with `S = P² + Q²` and `U = 1/|V|²`
/// (independent), the bound is `(σ_P + r·sd(S·U))²` — Cauchy–Schwarz covers
/// the correlation between `P` and `S` — with
///
/// * `var(S·U) = E(S)²var(U) + var(S)E(U)² + var(S)var(U)`,
/// * `E(P²) ≤ (|P| + 3σ_P)²`, `var(P²) ≤ 2σ_P⁴ + 4σ_P²(|P| + 3σ_P)²` (same for Q),
/// * `cov(P², Q²) ≤ (|P|+3σ_P)²(|Q|+3σ_Q)² − (|P|−3σ_P)₊²(|Q|−3σ_Q)₊²`,
/// * `E(U) ≤ 1/(|V| − 3σ_V)²`, `var(U) ≤ 1/(|V| − 3σ_V)⁴ − 1/(|V| + 3σ_V)⁴`.
pub fn analytic_variance_bound(x: &AnalyticInputs) -> Option<f64> {
    let lo_v = x.v - 3.0 * x.sigma_v;
    if lo_v <= 0.0 {
        return None;
    }
    let hi_p = x.p.abs() + 3.0 * x.sigma_p;
    let hi_q = x.q.abs() + 3.0 * x.sigma_q;
    let lo_p = (x.p.abs() - 3.0 * x.sigma_p).max(0.0);
    let lo_q = (x.q.abs() - 3.0 * x.sigma_q).max(0.0);
    // Y² with Y standard normal has variance 2; the σ⁴ terms carry it.
    let var_p2 = 2.0 * x.sigma_p.powi(4) + 4.0 * x.sigma_p.powi(2) * hi_p * hi_p;
    let var_q2 = 2.0 * x.sigma_q.powi(4) + 4.0 * x.sigma_q.powi(2) * hi_q * hi_q;
    let cov = (hi_p * hi_q).powi(2) - (lo_p * lo_q).powi(2);
    let e_s = hi_p * hi_p + hi_q * hi_q;
    let var_s = var_p2 + var_q2 + 2.0 * cov;
    let e_u = 1.0 / (lo_v * lo_v);
    let var_u = 1.0 / lo_v.powi(4) - 1.0 / (x.v + 3.0 * x.sigma_v).powi(4);
    let var_su = e_s * e_s * var_u + var_s * e_u * e_u + var_s * var_u;
    let sd = x.sigma_p + x.r * var_su.max(0.0).sqrt();
    Some(sd * sd)
}

/// Analytic far-end active flow from the near-end P and Q pair. Uses the
/// measured magnitude at the near end when present (σ from the variance
/// bound); otherwise assumes `|V| = 1` with an inflated σ.
pub fn pseudo_analytic(
    model: &NetworkModel,
    measurements: &[Measurement],
    p_source: &Measurement,
    q_source: &Measurement,
) -> Result<Measurement> {
    if p_source.kind != MeasurementKind::PFlow
        || q_source.kind != MeasurementKind::QFlow
        || p_source.location != q_source.location
    {
        return Err(Error::Schema(
            "analytic pseudo-readings need a P and Q flow pair at the same branch end".into(),
        ));
    }
    ensure_far_end_absent(model, measurements, p_source)?;
    let (m, l) = far_end(p_source)?;
    let r = branch_of(model, l, m)?.resistance();
    let vmag = measurements.iter().find(|x| {
        x.kind == MeasurementKind::Vmag && x.location == Location::Node(l) && x.value > 0.0
    });
    let (v, sigma_v) = vmag.map(|x| (x.value, x.sigma)).unwrap_or((1.0, 0.0));
    let value = analytic_value(p_source.value, q_source.value, v, r);
    let bound = vmag.and_then(|_| {
        analytic_variance_bound(&AnalyticInputs {
            p: p_source.value,
            sigma_p: p_source.sigma,
            q: q_source.value,
            sigma_q: q_source.sigma,
            v,
            sigma_v,
            r,
        })
    });
    let sigma = match bound {
        Some(var) => var.sqrt().max(PSEUDO_SIGMA_FLOOR),
        None => PSEUDO_SIGMA_FACTOR * p_source.sigma,
    };
    Ok(
        Measurement::on_branch(MeasurementKind::PFlow, m, l, value, sigma)
            .with_provenance(Provenance::Pseudo),
    )
}

/// How far-end pseudo-readings are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMethod {
    Negate,
    Efficiency { eta: f64 },
    Analytic,
}

impl RepairMethod {
    fn name(self) -> &'static str {
        match self {
            RepairMethod::Negate => "negate",
            RepairMethod::Efficiency { .. } => "efficiency",
            RepairMethod::Analytic => "analytic",
        }
    }
}

/// One pseudo-reading added by [`repair_observability`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairLogEntry {
    pub branch: String,
    pub bus: String,
    pub phase: Phase,
    pub kind: MeasurementKind,
    /// Method actually used (falls back to negation when the requested
    /// method does not apply to the available readings).
    pub method: &'static str,
    pub value: f64,
    pub sigma: f64,
}

/// Appends one far-end pseudo-reading for every closed branch whose flows are
/// metered at exactly one end.
pub fn repair_observability(
    model: &NetworkModel,
    measurements: &[Measurement],
    method: RepairMethod,
) -> Result<(Vec<Measurement>, Vec<RepairLogEntry>)> {
    if let RepairMethod::Efficiency { eta } = method {
        efficiency_value(0.0, eta)?;
    }
    // first P and Q flow reading per directed end
    let mut flows: HashMap<(usize, usize), [Option<usize>; 2]> = HashMap::new();
    for (i, m) in measurements.iter().enumerate() {
        if let Some(end) = m.branch_end() {
            let slot = usize::from(m.kind == MeasurementKind::QFlow);
            flows.entry(end).or_default()[slot].get_or_insert(i);
        }
    }
    let mut out = measurements.to_vec();
    let mut log = Vec::new();
    for (_, b) in model.closed_branches() {
        let fwd = flows.get(&(b.from_node, b.to_node)).copied();
        let rev = flows.get(&(b.to_node, b.from_node)).copied();
        let [p, q] = match (fwd, rev) {
            (Some(f), None) => f,
            (None, Some(r)) => r,
            _ => continue,
        };
        let prefer_q = q.is_some() && b.reactance() == 0.0 && b.resistance() != 0.0;
        let target = match (p, q) {
            (Some(_), Some(qi)) if prefer_q => qi,
            (Some(pi), _) => pi,
            (None, Some(qi)) => qi,
            (None, None) => continue,
        };
        let source = measurements[target];
        let (pseudo, used) = match (method, source.kind) {
            (RepairMethod::Efficiency { eta }, MeasurementKind::PFlow) => {
                (pseudo_efficiency(model, &out, &source, eta)?, method.name())
            }
            (RepairMethod::Analytic, MeasurementKind::PFlow) if q.is_some() => {
                let qm = measurements[q.expect("checked")];
                (pseudo_analytic(model, &out, &source, &qm)?, method.name())
            }
            _ => (
                pseudo_negate(model, &out, &source)?,
                RepairMethod::Negate.name(),
            ),
        };
        let (far, _) = pseudo.branch_end().expect("pseudo is a flow");
        let node = &model.nodes[far];
        log.push(RepairLogEntry {
            branch: b.id.clone(),
            bus: model.buses[node.bus].id.clone(),
            phase: node.phase,
            kind: pseudo.kind,
            method: used,
            value: pseudo.value,
            sigma: pseudo.sigma,
        });
        out.push(pseudo);
    }
    Ok((out, log))
}
