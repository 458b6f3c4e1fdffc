//! Feeder topology detection, network separation and decoupled estimation.
//!
//! Topology is a breadth-first spanning tree from the feeder head over the
//! bus graph of the admittance matrix; buses already reached are never
//! re-entered, so meshed networks yield a valid tree. Each bus carries its
//! parent, children, ancestors, generation set (all descendants) and rank
//! (the generation set's size). Separation repeatedly carves off the subtree
//! whose size best matches the requested sub-network size.

use std::collections::{BTreeSet, HashSet, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    measurement_residuals, prepare_measurements, solve_measurements, AnchorNode, EstimateOptions,
    EstimationResult,
};
use crate::measurements::{Location, Measurement, MeasurementKind, Provenance};
use crate::network::{adjacency, NetworkModel, Phase};
use crate::sdp::build_matrix_set;
use crate::solver::SolveStatus;

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyInfo {
    pub head: usize,
    pub parent: Vec<Option<usize>>,
    /// Children in ascending bus order.
    pub children: Vec<Vec<usize>>,
    /// Parent first, feeder head last.
    pub ancestors: Vec<Vec<usize>>,
    pub generation: Vec<BTreeSet<usize>>,
    pub rank: Vec<usize>,
    /// Breadth-first visiting order.
    pub order: Vec<usize>,
}

/// Builds the feeder tree from the head.
pub fn detect_topology(model: &NetworkModel) -> Result<TopologyInfo> {
    let adj = adjacency(model);
    let n = model.buses.len();
    let head = model.feeder_head();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    seen[head] = true;
    let mut queue = VecDeque::from([head]);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                parent[j] = Some(i);
                children[i].push(j);
                queue.push_back(j);
            }
        }
    }
    if order.len() < n {
        return Err(Error::Disconnected {
            unreached: (0..n)
                .filter(|&i| !seen[i])
                .map(|i| model.buses[i].id.clone())
                .collect(),
        });
    }
    let mut ancestors = vec![Vec::new(); n];
    for &i in &order {
        if let Some(p) = parent[i] {
            let mut a = vec![p];
            a.extend_from_slice(&ancestors[p]);
            ancestors[i] = a;
        }
    }
    let mut generation = vec![BTreeSet::new(); n];
    for &i in order.iter().rev() {
        let mut g = BTreeSet::new();
        for &c in &children[i] {
            g.insert(c);
            g.extend(generation[c].iter().copied());
        }
        generation[i] = g;
    }
    let rank = generation.iter().map(BTreeSet::len).collect();
    Ok(TopologyInfo {
        head,
        parent,
        children,
        ancestors,
        generation,
        rank,
        order,
    })
}

/// Splits the tree into bus sets of roughly `d` buses. Each round carves the
/// uncarved bus `i` minimising `|d − (R_i + 1)|` (ties to the lowest index)
/// together with its remaining generation set, and removes the carved buses
/// from every ancestor. Buses left when no rank is positive form the final
/// set. Sets are returned in carving order, each sorted.
pub fn separate(topology: &TopologyInfo, d: usize) -> Vec<Vec<usize>> {
    let d = d.max(1);
    let n = topology.rank.len();
    let mut rank = topology.rank.clone();
    let mut generation = topology.generation.clone();
    let mut carved = vec![false; n];
    let mut sets = Vec::new();
    while (0..n).any(|i| !carved[i] && rank[i] > 0) {
        let i = (0..n)
            .filter(|&i| !carved[i])
            .min_by_key(|&i| (d.abs_diff(rank[i] + 1), i))
            .expect("an uncarved bus exists");
        let mut set: Vec<usize> = generation[i].iter().copied().collect();
        set.push(i);
        set.sort_unstable();
        for &a in &topology.ancestors[i] {
            for b in &set {
                generation[a].remove(b);
            }
            rank[a] -= set.len();
        }
        for &b in &set {
            carved[b] = true;
            rank[b] = 0;
            generation[b].clear();
        }
        sets.push(set);
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !carved[i]).collect();
    if !rest.is_empty() {
        sets.push(rest);
    }
    sets
}

/// How tie-line readings enter the sub-network problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Tie-line flows are dropped, together with the injections of their
    /// end nodes (which include the tie-line flow).
    #[default]
    Ignore,
    /// A tie-line flow metered at a boundary node is folded into that node's
    /// injection reading, which then describes the sub-network alone.
    Update,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanAnchor {
    pub sub: usize,
    pub bus: String,
    pub phase: Phase,
    /// Reference angle in degrees; absent for a proposed placement that has
    /// no reading yet.
    pub ref_angle_deg: Option<f64>,
}

/// Serialisable partition plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub sub_networks: Vec<Vec<String>>,
    pub tie_lines: Vec<String>,
    pub anchors: Vec<PlanAnchor>,
    pub policy: TiePolicy,
}

pub fn parse_plan(text: &str) -> Result<PartitionPlan> {
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

/// A plan resolved against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlan {
    pub sub_networks: Vec<Vec<usize>>,
    pub tie_lines: Vec<usize>,
    /// Per sub-network, its anchors (possibly none before assignment).
    pub anchors: Vec<Vec<AnchorNode>>,
    pub policy: TiePolicy,
}

fn closed_crossing(model: &NetworkModel, owner: &[usize]) -> Vec<usize> {
    model
        .closed_branches()
        .filter(|(_, b)| owner[model.nodes[b.from_node].bus] != owner[model.nodes[b.to_node].bus])
        .map(|(k, _)| k)
        .collect()
}

/// Bus of highest degree within `set` (ties to the lowest index).
fn proposed_anchor_bus(adj: &[BTreeSet<usize>], set: &[usize]) -> usize {
    let inside: HashSet<usize> = set.iter().copied().collect();
    *set.iter()
        .max_by_key(|&&b| {
            (
                adj[b].iter().filter(|j| inside.contains(j)).count(),
                std::cmp::Reverse(b),
            )
        })
        .expect("non-empty set")
}

impl ResolvedPlan {
    /// Plan over bus sets with tie-lines derived from the crossing branches
    /// and one proposed (angle-less) anchor per set.
    pub fn from_sets(
        model: &NetworkModel,
        sets: Vec<Vec<usize>>,
        extra_ties: &[usize],
        policy: TiePolicy,
    ) -> Self {
        let mut owner = vec![usize::MAX; model.buses.len()];
        for (k, s) in sets.iter().enumerate() {
            for &b in s {
                owner[b] = k;
            }
        }
        let mut ties: BTreeSet<usize> = closed_crossing(model, &owner).into_iter().collect();
        ties.extend(extra_ties.iter().copied());
        ResolvedPlan {
            sub_networks: sets,
            tie_lines: ties.into_iter().collect(),
            anchors: Vec::new(),
            policy,
        }
    }

    /// Sub-network index of every bus.
    pub fn owner(&self, bus_count: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; bus_count];
        for (k, s) in self.sub_networks.iter().enumerate() {
            for &b in s {
                owner[b] = k;
            }
        }
        owner
    }

    /// Checks disjointness, coverage and connectedness of the sub-networks.
    pub fn validate(&self, model: &NetworkModel) -> Result<()> {
        let n = model.buses.len();
        let mut owner = vec![usize::MAX; n];
        for (k, s) in self.sub_networks.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidPlan(format!("sub-network {k} is empty")));
            }
            for &b in s {
                if b >= n {
                    return Err(Error::InvalidPlan(format!(
                        "sub-network {k} references bus index {b}"
                    )));
                }
                if owner[b] != usize::MAX {
                    return Err(Error::InvalidPlan(format!(
                        "bus `{}` belongs to sub-networks {} and {k}",
                        model.buses[b].id, owner[b]
                    )));
                }
                owner[b] = k;
            }
        }
        if let Some(b) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidPlan(format!(
                "bus `{}` is in no sub-network",
                model.buses[b].id
            )));
        }
        let ties: HashSet<usize> = self.tie_lines.iter().copied().collect();
        let mut adj = vec![Vec::new(); n];
        for (k, b) in model.closed_branches() {
            let (i, j) = (model.nodes[b.from_node].bus, model.nodes[b.to_node].bus);
            if !ties.contains(&k) && owner[i] == owner[j] && i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for (k, s) in self.sub_networks.iter().enumerate() {
            let mut seen = HashSet::from([s[0]]);
            let mut stack = vec![s[0]];
            while let Some(i) = stack.pop() {
                for &j in &adj[i] {
                    if seen.insert(j) {
                        stack.push(j);
                    }
                }
            }
            if seen.len() != s.len() {
                return Err(Error::InvalidPlan(format!(
                    "sub-network {k} is not connected"
                )));
            }
        }
        Ok(())
    }

    /// Assigns each anchor to the sub-network containing its node.
    pub fn assign_anchors(&mut self, model: &NetworkModel, anchors: &[AnchorNode]) {
        let owner = self.owner(model.buses.len());
        self.anchors = vec![Vec::new(); self.sub_networks.len()];
        for a in anchors {
            let k = owner[model.nodes[a.node].bus];
            if k != usize::MAX {
                self.anchors[k].push(*a);
            }
        }
    }

    pub fn to_plan(&self, model: &NetworkModel) -> PartitionPlan {
        let adj = adjacency(model);
        let mut anchors = Vec::new();
        for (k, set) in self.sub_networks.iter().enumerate() {
            match self.anchors.get(k).filter(|a| !a.is_empty()) {
                Some(list) => {
                    for a in list {
                        let node = &model.nodes[a.node];
                        anchors.push(PlanAnchor {
                            sub: k,
                            bus: model.buses[node.bus].id.clone(),
                            phase: node.phase,
                            ref_angle_deg: Some(a.angle_deg),
                        });
                    }
                }
                None => {
                    let bus = proposed_anchor_bus(&adj, set);
                    anchors.push(PlanAnchor {
                        sub: k,
                        bus: model.buses[bus].id.clone(),
                        phase: model.buses[bus].phases[0],
                        ref_angle_deg: None,
                    });
                }
            }
        }
        PartitionPlan {
            sub_networks: self
                .sub_networks
                .iter()
                .map(|s| s.iter().map(|&b| model.buses[b].id.clone()).collect())
                .collect(),
            tie_lines: self
                .tie_lines
                .iter()
                .map(|&k| model.branches[k].id.clone())
                .collect(),
            anchors,
            policy: self.policy,
        }
    }
}

impl PartitionPlan {
    /// Resolves ids against `model`. Anchors without a reference angle are
    /// proposals and are not carried over.
    pub fn resolve(&self, model: &NetworkModel) -> Result<ResolvedPlan> {
        let sub_networks = self
            .sub_networks
            .iter()
            .map(|s| {
                s.iter()
                    .map(|id| {
                        model
                            .bus_index(id)
                            .ok_or_else(|| Error::InvalidPlan(format!("unknown bus `{id}`")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let tie_lines = self
            .tie_lines
            .iter()
            .map(|id| {
                model
                    .branch_index(id)
                    .ok_or_else(|| Error::InvalidPlan(format!("unknown tie-line `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut anchors = vec![Vec::new(); sub_networks.len()];
        for a in &self.anchors {
            if a.sub >= sub_networks.len() {
                return Err(Error::InvalidPlan(format!(
                    "anchor refers to sub-network {}",
                    a.sub
                )));
            }
            let Some(angle) = a.ref_angle_deg else {
                continue;
            };
            let node = model.node_index(&a.bus, a.phase).ok_or_else(|| {
                Error::InvalidPlan(format!(
                    "anchor node {}.{} not in the network",
                    a.bus, a.phase
                ))
            })?;
            anchors[a.sub].push(AnchorNode {
                node,
                angle_deg: angle,
            });
        }
        let plan = ResolvedPlan {
            sub_networks,
            tie_lines,
            anchors,
            policy: self.policy,
        };
        plan.validate(model)?;
        Ok(plan)
    }
}

/// Automatic plan from Algorithm-2 style separation.
pub fn auto_plan(model: &NetworkModel, d: usize, policy: TiePolicy) -> Result<ResolvedPlan> {
    let topo = detect_topology(model)?;
    Ok(ResolvedPlan::from_sets(
        model,
        separate(&topo, d),
        &[],
        policy,
    ))
}

/// Sub-networks are the components left after removing every switch; each
/// closed switch becomes a tie-line.
pub fn separate_on_switches(model: &NetworkModel, policy: TiePolicy) -> ResolvedPlan {
    let n = model.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut switches = Vec::new();
    for (k, b) in model.closed_branches() {
        if b.is_switch {
            switches.push(k);
            continue;
        }
        let (i, j) = (
            find(&mut parent, model.nodes[b.from_node].bus),
            find(&mut parent, model.nodes[b.to_node].bus),
        );
        if i != j {
            parent[i.max(j)] = i.min(j);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for b in 0..n {
        let r = find(&mut parent, b);
        groups.entry(r).or_default().push(b);
    }
    ResolvedPlan::from_sets(model, groups.into_values().collect(), &switches, policy)
}

/// Result of one sub-network solve.
#[derive(Debug, Clone)]
pub struct SubNetworkResult {
    pub buses: Vec<usize>,
    pub result: EstimationResult,
}

#[derive(Debug, Clone)]
pub struct DecoupledResult {
    /// Merged phasors over the whole network, with objective, iteration and
    /// residual data aggregated over sub-networks.
    pub merged: EstimationResult,
    pub subs: Vec<SubNetworkResult>,
}

/// The sub-network's head: its bus closest to the feeder head.
fn sub_head(topology: &TopologyInfo, set: &[usize]) -> usize {
    *set.iter()
        .min_by_key(|&&b| (topology.ancestors[b].len(), b))
        .expect("non-empty set")
}

/// Measurements of one sub-network, re-indexed to its restricted model.
fn sub_measurements(
    model: &NetworkModel,
    measurements: &[Measurement],
    map: &[Option<usize>],
    ties: &HashSet<usize>,
    policy: TiePolicy,
) -> Vec<Measurement> {
    let tie_of = |l: usize, m: usize| model.branch_between(l, m).filter(|k| ties.contains(k));
    // boundary nodes: inside ends of tie-lines
    let mut boundary: HashSet<usize> = HashSet::new();
    for &k in ties {
        let b = &model.branches[k];
        for node in [b.from_node, b.to_node] {
            if map[node].is_some() {
                boundary.insert(node);
            }
        }
    }
    let mut out = Vec::new();
    for m in measurements {
        match m.location {
            Location::Node(k) => {
                let Some(local) = map[k] else { continue };
                let mut x = *m;
                x.location = Location::Node(local);
                let is_injection = matches!(m.kind, MeasurementKind::PInj | MeasurementKind::QInj);
                if is_injection && boundary.contains(&k) {
                    if policy == TiePolicy::Ignore {
                        continue;
                    }
                    let flow_kind = if m.kind == MeasurementKind::PInj {
                        MeasurementKind::PFlow
                    } else {
                        MeasurementKind::QFlow
                    };
                    let mut complete = true;
                    for &br in model.incident_branches(k) {
                        if !ties.contains(&br) {
                            continue;
                        }
                        let other = model.branches[br].other_end(k);
                        let reading = measurements.iter().find(|f| {
                            f.kind == flow_kind
                                && f.location == Location::Branch { from: k, to: other }
                        });
                        match reading {
                            // drawn-power convention: the sub-network injection
                            // is the full injection plus the tie-line term
                            Some(f) => {
                                x.value += f.value;
                                x.sigma = x.sigma.hypot(f.sigma);
                            }
                            None => complete = false,
                        }
                    }
                    if !complete {
                        continue;
                    }
                    x.provenance = Provenance::Pseudo;
                }
                out.push(x);
            }
            Location::Branch { from, to } => {
                if tie_of(from, to).is_some() {
                    continue;
                }
                if let (Some(l), Some(k)) = (map[from], map[to]) {
                    let mut x = *m;
                    x.location = Location::Branch { from: l, to: k };
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Solves every sub-network independently (concurrently) and merges the
/// phasors. Each sub-network's solution is referenced to its own anchors,
/// which places it directly in the common frame.
pub fn estimate_decoupled(
    model: &NetworkModel,
    measurements: &[Measurement],
    plan: &ResolvedPlan,
    options: &EstimateOptions,
) -> Result<DecoupledResult> {
    plan.validate(model)?;
    let topo = detect_topology(model)?;
    let ties: HashSet<usize> = plan.tie_lines.iter().copied().collect();
    let outcomes: Vec<Result<SubNetworkResult>> = plan
        .sub_networks
        .par_iter()
        .enumerate()
        .map(|(k, set)| {
            let wrap = |e: Error| Error::SubNetwork {
                index: k,
                cause: Box::new(e),
            };
            let head = sub_head(&topo, set);
            let (sub, map) = model.restrict(set, &ties, head).map_err(wrap)?;
            let local_anchors: Vec<AnchorNode> = plan
                .anchors
                .get(k)
                .map(|list| {
                    list.iter()
                        .filter_map(|a| {
                            map[a.node].map(|node| AnchorNode {
                                node,
                                angle_deg: a.angle_deg,
                            })
                        })
                        .collect()
                })
                .unwrap_or_default();
            if local_anchors.is_empty() {
                return Err(wrap(Error::InvalidPlan(format!(
                    "sub-network {k} has no anchor with a reference angle"
                ))));
            }
            let meas = sub_measurements(model, measurements, &map, &ties, plan.policy);
            let (used, log) = prepare_measurements(&sub, &meas, options.repair).map_err(wrap)?;
            let mut result =
                solve_measurements(&sub, &used, &local_anchors, options).map_err(wrap)?;
            result.repair_log = log;
            // back to global node indices
            let mut global = vec![Complex64::new(0.0, 0.0); model.node_count()];
            for (g, l) in map.iter().enumerate() {
                if let Some(l) = l {
                    global[g] = result.state[*l];
                }
            }
            result.state = global;
            Ok(SubNetworkResult {
                buses: set.clone(),
                result,
            })
        })
        .collect();
    let subs = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut state = vec![Complex64::new(0.0, 0.0); model.node_count()];
    let mut objective = 0.0;
    let mut iterations = 0;
    let mut status = SolveStatus::Converged;
    let mut ratio: f64 = 0.0;
    let mut repair_log = Vec::new();
    for s in &subs {
        for &b in &s.buses {
            for &node in &model.buses[b].nodes {
                state[node] = s.result.state[node];
            }
        }
        objective += s.result.objective;
        iterations += s.result.iterations;
        if s.result.status != SolveStatus::Converged {
            status = s.result.status;
        }
        ratio = ratio.max(s.result.rank1_ratio);
        repair_log.extend(s.result.repair_log.iter().cloned());
    }
    let set = build_matrix_set::<f64>(model);
    let residuals = measurement_residuals(&set, measurements, &state);
    Ok(DecoupledResult {
        merged: EstimationResult {
            state,
            objective,
            iterations,
            status,
            rank1_ratio: ratio,
            measurements: measurements.to_vec(),
            repair_log,
            residuals,
        },
        subs,
    })
}
