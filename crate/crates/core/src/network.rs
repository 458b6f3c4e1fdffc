//! Network model: buses, phase-resolved nodes, branches and the reduced
//! multiphase admittance matrix.
//!
//! A bus owns one node per connected phase, so the node space has
//! `N' = Σ d_i` entries. Branches connect individual nodes; a coupled
//! three-phase line is described as one branch per nonzero off-diagonal
//! admittance entry. All quantities are per-unit on the document's base.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    /// Nominal angle of the phase in a positive-sequence system, in degrees.
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: String,
    /// Connected phases, sorted and unique.
    pub phases: Vec<Phase>,
    pub is_feeder_head: bool,
    pub base_kv: f64,
    /// Node indices of this bus, aligned with `phases`.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub index: usize,
    pub bus: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub id: String,
    pub from_node: usize,
    pub to_node: usize,
    /// Series admittance `y_lm`; the admittance matrix carries `-y_lm` off the diagonal.
    pub series_admittance: Complex64,
    /// Shunt admittance at each end of the pi section.
    pub shunt_admittance: Complex64,
    pub is_switch: bool,
    pub switch_closed: bool,
}

impl Branch {
    pub fn is_closed(&self) -> bool {
        !self.is_switch || self.switch_closed
    }

    pub fn impedance(&self) -> Complex64 {
        self.series_admittance.inv()
    }

    pub fn resistance(&self) -> f64 {
        self.impedance().re
    }

    pub fn reactance(&self) -> f64 {
        self.impedance().im
    }

    pub fn has_shunt(&self) -> bool {
        self.shunt_admittance != Complex64::new(0.0, 0.0)
    }

    /// The node at the opposite end from `node`.
    pub fn other_end(&self, node: usize) -> usize {
        if node == self.from_node {
            self.to_node
        } else {
            self.from_node
        }
    }

    pub fn touches(&self, node: usize) -> bool {
        self.from_node == node || self.to_node == node
    }
}

/// Row-sparse complex symmetric matrix.
#[derive(Debug, Clone, Default)]
pub struct SparseComplex {
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SparseComplex {
    pub fn zeros(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn add(&mut self, row: usize, col: usize, value: Complex64) {
        let r = &mut self.rows[row];
        match r.binary_search_by_key(&col, |e| e.0) {
            Ok(pos) => r[pos].1 += value,
            Err(pos) => r.insert(pos, (col, value)),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let r = &self.rows[row];
        r.binary_search_by_key(&col, |e| e.0)
            .map(|pos| r[pos].1)
            .unwrap_or_default()
    }

    /// Stored entries of one row, sorted by column.
    pub fn row(&self, row: usize) -> &[(usize, Complex64)] {
        &self.rows[row]
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `Y · v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

/// Assembles the node admittance matrix from closed branches.
///
/// Diagonal entries collect `y_lm + ȳ_lm` over incident branches, off-diagonal
/// entries carry `-y_lm`.
pub fn assemble_ybus(node_count: usize, branches: &[Branch]) -> SparseComplex {
    let mut y = SparseComplex::zeros(node_count);
    for b in branches.iter().filter(|b| b.is_closed()) {
        let (l, m) = (b.from_node, b.to_node);
        let ys = b.series_admittance;
        y.add(l, l, ys + b.shunt_admittance);
        y.add(m, m, ys + b.shunt_admittance);
        y.add(l, m, -ys);
        y.add(m, l, -ys);
    }
    y
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub ybus: SparseComplex,
    head: usize,
    bus_lookup: HashMap<String, usize>,
    node_lookup: HashMap<(usize, Phase), usize>,
    branch_lookup: HashMap<String, usize>,
    /// Closed branches incident to each node.
    incident: Vec<Vec<usize>>,
    /// Closed branch by unordered node pair.
    pair_lookup: HashMap<(usize, usize), usize>,
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl NetworkModel {
    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if !(doc.base_mva.is_finite() && doc.base_mva > 0.0) {
            return Err(Error::Schema(format!(
                "base_mva must be positive, got {}",
                doc.base_mva
            )));
        }
        let mut buses = Vec::with_capacity(doc.buses.len());
        let mut nodes = Vec::new();
        let mut bus_lookup = HashMap::new();
        let mut node_lookup = HashMap::new();
        for (bi, b) in doc.buses.iter().enumerate() {
            if b.id.is_empty() {
                return Err(Error::Schema("bus id must be non-empty".into()));
            }
            if bus_lookup.insert(b.id.clone(), bi).is_some() {
                return Err(Error::DuplicateBus(b.id.clone()));
            }
            if b.phases.is_empty() {
                return Err(Error::Schema(format!("bus `{}` has no phases", b.id)));
            }
            let mut phases = b.phases.clone();
            phases.sort();
            for w in phases.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::DuplicateNode {
                        bus: b.id.clone(),
                        phase: w[0].to_string(),
                    });
                }
            }
            let mut bus_nodes = Vec::with_capacity(phases.len());
            for &phase in &phases {
                let index = nodes.len();
                nodes.push(Node {
                    index,
                    bus: bi,
                    phase,
                });
                node_lookup.insert((bi, phase), index);
                bus_nodes.push(index);
            }
            buses.push(Bus {
                id: b.id.clone(),
                phases,
                is_feeder_head: b.feeder_head,
                base_kv: b.base_kv,
                nodes: bus_nodes,
            });
        }
        let heads: Vec<usize> = (0..buses.len())
            .filter(|&i| buses[i].is_feeder_head)
            .collect();
        if heads.len() != 1 {
            return Err(Error::FeederHead(heads.len()));
        }

        let mut branches = Vec::with_capacity(doc.branches.len());
        let mut branch_lookup = HashMap::new();
        let mut pair_lookup = HashMap::new();
        let resolve = |branch: &str, end: &NodeRef| -> Result<usize> {
            bus_lookup
                .get(&end.bus)
                .and_then(|&bi| node_lookup.get(&(bi, end.phase)).copied())
                .ok_or_else(|| Error::DanglingEndpoint {
                    branch: branch.to_string(),
                    bus: end.bus.clone(),
                    phase: end.phase.to_string(),
                })
        };
        for (k, b) in doc.branches.iter().enumerate() {
            if branch_lookup.insert(b.id.clone(), k).is_some() {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "duplicate branch id".into(),
                });
            }
            let from = resolve(&b.id, &b.from)?;
            let to = resolve(&b.id, &b.to)?;
            if from == to {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "both ends on the same node".into(),
                });
            }
            let z = Complex64::new(b.r, b.x);
            if !(b.r.is_finite() && b.x.is_finite() && b.shunt_b.is_finite()) {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "non-finite parameter".into(),
                });
            }
            if z.norm() == 0.0 {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "zero series impedance".into(),
                });
            }
            let branch = Branch {
                id: b.id.clone(),
                from_node: from,
                to_node: to,
                series_admittance: z.inv(),
                shunt_admittance: Complex64::new(0.0, b.shunt_b),
                is_switch: b.is_switch,
                switch_closed: b.closed,
            };
            if !b.is_switch && !b.closed {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "only switches may be open".into(),
                });
            }
            if branch.is_closed() && pair_lookup.insert(pair_key(from, to), k).is_some() {
                return Err(Error::InvalidBranch {
                    branch: b.id.clone(),
                    reason: "parallel closed branch between the same nodes".into(),
                });
            }
            branches.push(branch);
        }

        let mut incident = vec![Vec::new(); nodes.len()];
        for (k, b) in branches.iter().enumerate().filter(|(_, b)| b.is_closed()) {
            incident[b.from_node].push(k);
            incident[b.to_node].push(k);
        }
        let ybus = assemble_ybus(nodes.len(), &branches);
        let model = NetworkModel {
            base_mva: doc.base_mva,
            buses,
            nodes,
            branches,
            ybus,
            head: heads[0],
            bus_lookup,
            node_lookup,
            branch_lookup,
            incident,
            pair_lookup,
        };
        model.check_connected()?;
        Ok(model)
    }

    fn check_connected(&self) -> Result<()> {
        let adj = adjacency(self);
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([self.head]);
        seen[self.head] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let unreached: Vec<String> = seen
            .iter()
            .enumerate()
            .filter(|(_, s)| !**s)
            .map(|(i, _)| self.buses[i].id.clone())
            .collect();
        if unreached.is_empty() {
            Ok(())
        } else {
            Err(Error::Disconnected { unreached })
        }
    }

    /// `N'`, the size of the node space.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `M'`, the number of closed branches.
    pub fn branch_count(&self) -> usize {
        self.branches.iter().filter(|b| b.is_closed()).count()
    }

    pub fn feeder_head(&self) -> usize {
        self.head
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_lookup.get(id).copied()
    }

    pub fn node_index(&self, bus_id: &str, phase: Phase) -> Option<usize> {
        self.bus_index(bus_id)
            .and_then(|b| self.node_lookup.get(&(b, phase)).copied())
    }

    pub fn node_of(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_lookup.get(&(bus, phase)).copied()
    }

    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branch_lookup.get(id).copied()
    }

    /// Closed branch joining two nodes, in either orientation.
    pub fn branch_between(&self, l: usize, m: usize) -> Option<usize> {
        self.pair_lookup.get(&pair_key(l, m)).copied()
    }

    pub fn incident_branches(&self, node: usize) -> &[usize] {
        &self.incident[node]
    }

    pub fn closed_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_closed())
    }

    pub fn node_label(&self, node: usize) -> String {
        let n = &self.nodes[node];
        format!("{}.{}", self.buses[n.bus].id, n.phase)
    }

    /// Connected components of the node graph over closed branches, each sorted.
    pub fn node_components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut k = 0;
            while k < members.len() {
                let v = members[k];
                k += 1;
                for &(w, y) in self.ybus.row(v) {
                    if w != v && y != Complex64::new(0.0, 0.0) && comp[w] == usize::MAX {
                        comp[w] = id;
                        members.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            base_mva: self.base_mva,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id.clone(),
                    phases: b.phases.clone(),
                    feeder_head: b.is_feeder_head,
                    base_kv: b.base_kv,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| {
                    let z = b.impedance();
                    BranchRecord {
                        id: b.id.clone(),
                        from: self.node_ref(b.from_node),
                        to: self.node_ref(b.to_node),
                        r: z.re,
                        x: z.im,
                        shunt_b: b.shunt_admittance.im,
                        is_switch: b.is_switch,
                        closed: b.switch_closed,
                    }
                })
                .collect(),
        }
    }

    fn node_ref(&self, node: usize) -> NodeRef {
        let n = &self.nodes[node];
        NodeRef {
            bus: self.buses[n.bus].id.clone(),
            phase: n.phase,
        }
    }

    /// Sub-network induced by `buses`, keeping closed branches with both ends
    /// inside and not listed in `excluded`. `head` becomes the feeder head.
    ///
    /// Returns the model and, for every node of `self`, its index in the
    /// restricted model.
    pub fn restrict(
        &self,
        buses: &[usize],
        excluded: &HashSet<usize>,
        head: usize,
    ) -> Result<(NetworkModel, Vec<Option<usize>>)> {
        let inside: BTreeSet<usize> = buses.iter().copied().collect();
        if !inside.contains(&head) {
            return Err(Error::InvalidPlan(format!(
                "head bus `{}` is not in the sub-network",
                self.buses[head].id
            )));
        }
        let doc = NetworkDocument {
            base_mva: self.base_mva,
            buses: inside
                .iter()
                .map(|&i| {
                    let b = &self.buses[i];
                    BusRecord {
                        id: b.id.clone(),
                        phases: b.phases.clone(),
                        feeder_head: i == head,
                        base_kv: b.base_kv,
                    }
                })
                .collect(),
            branches: self
                .closed_branches()
                .filter(|(k, b)| {
                    !excluded.contains(k)
                        && inside.contains(&self.nodes[b.from_node].bus)
                        && inside.contains(&self.nodes[b.to_node].bus)
                })
                .map(|(_, b)| {
                    let z = b.impedance();
                    BranchRecord {
                        id: b.id.clone(),
                        from: self.node_ref(b.from_node),
                        to: self.node_ref(b.to_node),
                        r: z.re,
                        x: z.im,
                        shunt_b: b.shunt_admittance.im,
                        is_switch: b.is_switch,
                        closed: b.switch_closed,
                    }
                })
                .collect(),
        };
        let sub = NetworkModel::from_document(&doc)?;
        let map = self
            .nodes
            .iter()
            .map(|n| sub.node_index(&self.buses[n.bus].id, n.phase))
            .collect();
        Ok((sub, map))
    }
}

/// Bus-level adjacency sets derived from the nonzero off-diagonal pattern of
/// the admittance matrix.
pub fn adjacency(model: &NetworkModel) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); model.buses.len()];
    for (l, node) in model.nodes.iter().enumerate() {
        for &(m, y) in model.ybus.row(l) {
            if m == l || y == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (bi, bj) = (node.bus, model.nodes[m].bus);
            if bi != bj {
                adj[bi].insert(bj);
            }
        }
    }
    adj
}

/// Parses and validates a network document.
pub fn parse_network(text: &str) -> Result<NetworkModel> {
    let doc: NetworkDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    NetworkModel::from_document(&doc)
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub feeder_head: bool,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRef {
    pub bus: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub id: String,
    pub from: NodeRef,
    pub to: NodeRef,
    /// Series resistance, per unit.
    pub r: f64,
    /// Series reactance, per unit.
    pub x: f64,
    /// Shunt susceptance at each end, per unit.
    #[serde(default)]
    pub shunt_b: f64,
    #[serde(default)]
    pub is_switch: bool,
    #[serde(default = "default_closed")]
    pub closed: bool,
}

fn default_closed() -> bool {
    true
}
