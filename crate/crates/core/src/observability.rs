//! Structural sufficiency check of a measurement set for the lifted
//! formulation.
//!
//! The lifted model has `3N' + 4M'` distinct unknowns (`W_kk` pairs and the
//! cross terms of every branch), of which at most `N' + 2M'` can be
//! recovered independently once the node-balance and branch identities are
//! accounted for. The report counts distinct measurement functions, deducts
//! the dependencies those identities create, and lists branches whose flows
//! are metered at one end only — the gap that leaves the relaxation without
//! a rank-one optimum.

use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use crate::measurements::{Location, Measurement, MeasurementKind};
use crate::network::{NetworkModel, Phase};
use crate::sdp::count_variables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Observable,
    /// Only one-sided flow gaps, which far-end pseudo-readings close.
    Repairable,
    /// Some node appears in no measurement at all.
    Unobservable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeRef {
    pub bus: String,
    pub phase: Phase,
}

/// A node whose injection pair and every incident flow are metered, or a
/// branch with both-end flows and both-end voltage magnitudes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RedundancyPoint {
    NodeBalance { bus: String, phase: Phase },
    BranchFlowVoltage { branch: String },
}

/// A branch whose flows are metered at `measured` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OneSidedBranch {
    pub branch: String,
    pub measured: NodeRef,
    pub missing: NodeRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub nodes: usize,
    pub branches: usize,
    pub distinct_vars: usize,
    /// `N' + 2M'`.
    pub ceiling: usize,
    /// Distinct measurement functions present.
    pub distinct_measurements: usize,
    /// Two per redundancy point.
    pub deductions: usize,
    pub independent_eqs_available: usize,
    pub redundancy_points: Vec<RedundancyPoint>,
    pub unobservable_branches: Vec<OneSidedBranch>,
    /// Nodes that no measurement touches.
    pub uncovered_nodes: Vec<NodeRef>,
    pub verdict: Verdict,
}

fn node_ref(model: &NetworkModel, k: usize) -> NodeRef {
    let n = &model.nodes[k];
    NodeRef {
        bus: model.buses[n.bus].id.clone(),
        phase: n.phase,
    }
}

pub fn analyze(model: &NetworkModel, measurements: &[Measurement]) -> ObservabilityReport {
    let n = model.node_count();
    let m = model.branch_count();
    let counts = count_variables(n, m);

    let present: HashSet<(MeasurementKind, Location)> =
        measurements.iter().map(|x| (x.kind, x.location)).collect();
    let has = |kind, loc| present.contains(&(kind, loc));
    let flow_pair = |l: usize, k: usize| {
        let loc = Location::Branch { from: l, to: k };
        has(MeasurementKind::PFlow, loc) && has(MeasurementKind::QFlow, loc)
    };
    let any_flow = |l: usize, k: usize| {
        let loc = Location::Branch { from: l, to: k };
        has(MeasurementKind::PFlow, loc) || has(MeasurementKind::QFlow, loc)
    };

    let mut points = Vec::new();
    for k in 0..n {
        let loc = Location::Node(k);
        if !(has(MeasurementKind::PInj, loc) && has(MeasurementKind::QInj, loc)) {
            continue;
        }
        let all_flows = model.incident_branches(k).iter().all(|&b| {
            let other = model.branches[b].other_end(k);
            flow_pair(k, other)
        });
        if all_flows {
            let r = node_ref(model, k);
            points.push(RedundancyPoint::NodeBalance {
                bus: r.bus,
                phase: r.phase,
            });
        }
    }
    let mut one_sided = Vec::new();
    for (_, b) in model.closed_branches() {
        let (l, k) = (b.from_node, b.to_node);
        let both_v = has(MeasurementKind::Vmag, Location::Node(l))
            && has(MeasurementKind::Vmag, Location::Node(k));
        if flow_pair(l, k) && flow_pair(k, l) && both_v {
            points.push(RedundancyPoint::BranchFlowVoltage {
                branch: b.id.clone(),
            });
        }
        let (fwd, rev) = (any_flow(l, k), any_flow(k, l));
        if fwd != rev {
            let (measured, missing) = if fwd { (l, k) } else { (k, l) };
            one_sided.push(OneSidedBranch {
                branch: b.id.clone(),
                measured: node_ref(model, measured),
                missing: node_ref(model, missing),
            });
        }
    }

    let mut covered = BTreeSet::new();
    for x in measurements {
        match x.location {
            Location::Node(k) => {
                covered.insert(k);
            }
            Location::Branch { from, to } => {
                covered.insert(from);
                covered.insert(to);
            }
        }
    }
    let uncovered: Vec<NodeRef> = (0..n)
        .filter(|k| !covered.contains(k))
        .map(|k| node_ref(model, k))
        .collect();

    let deductions = 2 * points.len();
    let distinct_measurements = present.len();
    let independent = distinct_measurements
        .saturating_sub(deductions)
        .min(counts.independent);
    let verdict = if !uncovered.is_empty() {
        Verdict::Unobservable
    } else if !one_sided.is_empty() {
        Verdict::Repairable
    } else {
        Verdict::Observable
    };
    ObservabilityReport {
        nodes: n,
        branches: m,
        distinct_vars: counts.distinct,
        ceiling: counts.independent,
        distinct_measurements,
        deductions,
        independent_eqs_available: independent,
        redundancy_points: points,
        unobservable_branches: one_sided,
        uncovered_nodes: uncovered,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{synthesize, MeasurementPlan, NoiseLevel, NoiseSpec};
    use crate::network::parse_network;
    use crate::synthetic;

    fn two_node() -> NetworkModel {
        parse_network(
            r#"{"base_mva":1,"buses":[
                {"id":"1","phases":["A"],"feeder_head":true,"base_kv":1},
                {"id":"2","phases":["A"],"base_kv":1}],
              "branches":[{"id":"a","from":{"bus":"1","phase":"A"},"to":{"bus":"2","phase":"A"},"r":0.01,"x":0.02}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn one_sided_flow_is_repairable() {
        let model = two_node();
        let meas = vec![
            Measurement::on_branch(MeasurementKind::PFlow, 0, 1, -0.5, 0.02),
            Measurement::at_node(MeasurementKind::Vmag, 0, 1.0, 0.01),
        ];
        let r = analyze(&model, &meas);
        assert_eq!(r.verdict, Verdict::Repairable);
        assert_eq!(r.unobservable_branches.len(), 1);
        assert_eq!(r.unobservable_branches[0].missing.bus, "2");
    }

    #[test]
    fn single_node_with_voltage_is_observable() {
        let model = parse_network(
            r#"{"base_mva":1,"buses":[{"id":"1","phases":["A"],"feeder_head":true,"base_kv":1}],"branches":[]}"#,
        )
        .unwrap();
        let r = analyze(
            &model,
            &[Measurement::at_node(MeasurementKind::Vmag, 0, 1.0, 0.01)],
        );
        assert_eq!(r.verdict, Verdict::Observable);
    }

    #[test]
    fn uncovered_node_is_unobservable() {
        let model = two_node();
        let r = analyze(
            &model,
            &[Measurement::at_node(MeasurementKind::Vmag, 0, 1.0, 0.01)],
        );
        assert_eq!(r.verdict, Verdict::Unobservable);
        assert_eq!(r.uncovered_nodes.len(), 1);
    }

    #[test]
    fn full_set_on_41_bus_reaches_the_ceiling() {
        let model = NetworkModel::from_document(&synthetic::radial41()).unwrap();
        let truth = synthetic::truth_state(&model, 3);
        let meas = synthesize(
            &model,
            &truth,
            &MeasurementPlan::full(&model),
            &NoiseSpec::level(NoiseLevel::L0, 3),
        )
        .unwrap();
        let r = analyze(&model, &meas);
        assert_eq!(r.distinct_vars, 283);
        assert_eq!(r.ceiling, 121);
        assert_eq!(r.deductions, 162);
        assert_eq!(r.independent_eqs_available, 121);
        assert_eq!(r.verdict, Verdict::Observable);
    }
}
