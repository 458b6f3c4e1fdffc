//! Monolithic estimation pipeline: observability gate and repair, problem
//! assembly, barrier solve, rank-one recovery and reference rotation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::{
    exact_value, repair_observability, Measurement, RepairLogEntry, RepairMethod,
};
use crate::network::{NetworkModel, Phase};
use crate::observability::{analyze, Verdict};
use crate::sdp::{
    assemble_problem, build_matrix_set, extract_state_grouped, RankGate, StateVector,
};
use crate::solver::{solve, SolveStatus, SolverConfig};

/// A phasor reference: the node's angle is fixed to `angle_deg` (a μPMU
/// reading, or the nominal phase angle when nothing better is known).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub bus: String,
    pub phase: Phase,
    pub angle_deg: f64,
}

/// An anchor resolved against a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorNode {
    pub node: usize,
    pub angle_deg: f64,
}

pub fn parse_anchors(text: &str) -> Result<Vec<Anchor>> {
    let anchors: Vec<Anchor> =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if let Some(a) = anchors.iter().find(|a| !a.angle_deg.is_finite()) {
        return Err(Error::Schema(format!(
            "anchor {}.{} has a non-finite angle",
            a.bus, a.phase
        )));
    }
    Ok(anchors)
}

/// Resolves anchors to node indices. Anchors on nodes the model does not
/// have are an error.
pub fn resolve_anchors(model: &NetworkModel, anchors: &[Anchor]) -> Result<Vec<AnchorNode>> {
    anchors
        .iter()
        .map(|a| {
            model
                .node_index(&a.bus, a.phase)
                .map(|node| AnchorNode {
                    node,
                    angle_deg: a.angle_deg,
                })
                .ok_or_else(|| {
                    Error::InvalidReference(format!(
                        "anchor node {}.{} not in the network",
                        a.bus, a.phase
                    ))
                })
        })
        .collect()
}

/// One reference per node component: a feeder-head node when the component
/// contains one, otherwise its lowest-index node, at the nominal angle of
/// its phase.
pub fn default_anchors(model: &NetworkModel) -> Vec<AnchorNode> {
    let head = model.feeder_head();
    model
        .node_components()
        .iter()
        .map(|comp| {
            let node = comp
                .iter()
                .copied()
                .find(|&k| model.nodes[k].bus == head)
                .unwrap_or(comp[0]);
            AnchorNode {
                node,
                angle_deg: model.nodes[node].phase.nominal_angle_deg(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Far-end pseudo-reading method; `None` disables repair, in which case
    /// any one-sided flow gap is reported as unobservable.
    pub repair: Option<RepairMethod>,
    pub solver: SolverConfig<f64>,
    pub rank_gate: RankGate,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            repair: Some(RepairMethod::Negate),
            solver: SolverConfig::default(),
            rank_gate: RankGate::default(),
        }
    }
}

/// Per-measurement fit at the estimated state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementResidual {
    pub estimate: f64,
    pub residual: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Node phasors in the model's node order.
    pub state: Vec<Complex64>,
    /// `Σ (z_i − Tr(A_i W))²/σ_i²` at the solver's `W`.
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub rank1_ratio: f64,
    /// Measurements actually used (after repair).
    pub measurements: Vec<Measurement>,
    pub repair_log: Vec<RepairLogEntry>,
    /// Fit of every used measurement at the extracted state.
    pub residuals: Vec<MeasurementResidual>,
}

/// Applies the observability gate and, when enabled, far-end repair.
pub fn prepare_measurements(
    model: &NetworkModel,
    measurements: &[Measurement],
    repair: Option<RepairMethod>,
) -> Result<(Vec<Measurement>, Vec<RepairLogEntry>)> {
    let (used, log) = match repair {
        Some(method) => repair_observability(model, measurements, method)?,
        None => (measurements.to_vec(), Vec::new()),
    };
    let report = analyze(model, &used);
    match report.verdict {
        Verdict::Observable => Ok((used, log)),
        Verdict::Repairable => Err(Error::Unobservable(format!(
            "{} branch(es) metered at one end only (first: `{}`); repair is disabled",
            report.unobservable_branches.len(),
            report.unobservable_branches[0].branch
        ))),
        Verdict::Unobservable => Err(Error::Unobservable(format!(
            "{} node(s) appear in no measurement (first: {}.{})",
            report.uncovered_nodes.len(),
            report.uncovered_nodes[0].bus,
            report.uncovered_nodes[0].phase
        ))),
    }
}

/// Solves with an already prepared measurement set.
pub fn solve_measurements(
    model: &NetworkModel,
    measurements: &[Measurement],
    anchors: &[AnchorNode],
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    options.solver.validate()?;
    let set = build_matrix_set::<f64>(model);
    // the lifted constraint fixes one angle per component; further anchors in
    // the same component cannot be imposed and are left out
    let mut used_anchors: Vec<AnchorNode> = Vec::new();
    for comp in set.components() {
        let mut inside = anchors.iter().filter(|a| comp.contains(&a.node));
        if let Some(&first) = inside.next() {
            used_anchors.push(first);
            if inside.next().is_some() {
                log::info!(
                    "component of {} has several anchors; using {}",
                    model.node_label(comp[0]),
                    model.node_label(first.node)
                );
            }
        }
    }
    let anchors = &used_anchors[..];
    let anchor_nodes: Vec<usize> = anchors.iter().map(|a| a.node).collect();
    let problem = assemble_problem(&set, measurements, &anchor_nodes)?;
    let report = solve(&problem, &options.solver);
    match report.status {
        SolveStatus::NumericalFailure => {
            return Err(Error::Solver(format!(
                "barrier iteration broke down after {} steps (objective {:.3e})",
                report.iterations, report.objective
            )))
        }
        SolveStatus::MaxIter => log::warn!(
            "solver stopped at the iteration limit ({}); using the last iterate",
            report.iterations
        ),
        SolveStatus::Converged => {}
    }
    let (x, ratio) = extract_state_grouped(&report.w.w, set.components(), &anchor_nodes)?;
    options.rank_gate.check(ratio)?;
    let mut state = x.phasors();
    for comp in set.components() {
        let Some(anchor) = anchors.iter().find(|a| comp.contains(&a.node)) else {
            continue;
        };
        let rot = Complex64::from_polar(1.0, anchor.angle_deg.to_radians());
        for &k in comp {
            state[k] *= rot;
        }
    }
    let residuals = measurement_residuals(&set, measurements, &state);
    Ok(EstimationResult {
        state,
        objective: report.objective,
        iterations: report.iterations,
        status: report.status,
        rank1_ratio: ratio,
        measurements: measurements.to_vec(),
        repair_log: Vec::new(),
        residuals,
    })
}

/// Residuals `z_i − h_i(V̂)` of measurements at a phasor state.
pub fn measurement_residuals(
    set: &crate::sdp::MeasurementMatrixSet<f64>,
    measurements: &[Measurement],
    state: &[Complex64],
) -> Vec<MeasurementResidual> {
    let x = StateVector::<f64>::from_phasors(state);
    measurements
        .iter()
        .map(|m| {
            let est = exact_value(set, m.kind, m.location, &x).unwrap_or(f64::NAN);
            let r = m.value - est;
            MeasurementResidual {
                estimate: est,
                residual: r,
                normalized: r / m.sigma,
            }
        })
        .collect()
}

/// Full monolithic pipeline.
pub fn estimate(
    model: &NetworkModel,
    measurements: &[Measurement],
    anchors: &[AnchorNode],
    options: &EstimateOptions,
) -> Result<EstimationResult> {
    let (used, log) = prepare_measurements(model, measurements, options.repair)?;
    let mut result = solve_measurements(model, &used, anchors, options)?;
    result.repair_log = log;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{synthesize, MeasurementPlan, NoiseLevel, NoiseSpec};
    use crate::synthetic;

    #[test]
    fn chain_recovers_truth_at_zero_noise() {
        let model = NetworkModel::from_document(&synthetic::chain(5)).unwrap();
        let truth = synthetic::truth_state(&model, 4);
        let meas = synthesize(
            &model,
            &truth,
            &MeasurementPlan::full(&model),
            &NoiseSpec::level(NoiseLevel::L0, 4),
        )
        .unwrap();
        let anchors = default_anchors(&model);
        let r = estimate(&model, &meas, &anchors, &EstimateOptions::default()).unwrap();
        for (a, b) in r.state.iter().zip(&truth) {
            assert!((a - b).norm() < 1e-5, "{a} vs {b}");
        }
        assert!(r.residuals.iter().all(|x| x.normalized.abs() < 1e-2));
    }

    #[test]
    fn one_sided_set_without_repair_is_unobservable() {
        let model = NetworkModel::from_document(&synthetic::chain(4)).unwrap();
        let truth = synthetic::truth_state(&model, 1);
        let meas = synthesize(
            &model,
            &truth,
            &MeasurementPlan::one_sided(&model, &[]),
            &NoiseSpec::level(NoiseLevel::L0, 1),
        )
        .unwrap();
        let options = EstimateOptions {
            repair: None,
            ..EstimateOptions::default()
        };
        let err = estimate(&model, &meas, &default_anchors(&model), &options).unwrap_err();
        assert!(matches!(err, Error::Unobservable(_)));
    }

    #[test]
    fn anchors_resolve_by_bus_and_phase() {
        let model = NetworkModel::from_document(&synthetic::chain(3)).unwrap();
        let text = r#"[{"bus":"b2","phase":"A","angle_deg":-1.5}]"#;
        let a = resolve_anchors(&model, &parse_anchors(text).unwrap()).unwrap();
        assert_eq!(a[0].node, model.node_index("b2", Phase::A).unwrap());
        let bad = parse_anchors(r#"[{"bus":"b9","phase":"A","angle_deg":0}]"#).unwrap();
        assert!(resolve_anchors(&model, &bad).is_err());
    }
}
