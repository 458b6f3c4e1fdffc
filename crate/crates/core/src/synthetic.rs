//! Test networks and ground-truth states.
//!
//! Everything here is deterministic given its arguments. Line data of the
//! 13-bus feeder follows the published configuration tables (ohm per mile,
//! converted to per-unit on 5 MVA / 4.16 kV); the other systems use their
//! published topologies with generated impedances.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::network::{BranchRecord, BusRecord, NetworkDocument, NetworkModel, NodeRef, Phase};
use crate::rng::{sub_seed, SplitMix64};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_open01()
}

fn below(rng: &mut SplitMix64, n: usize) -> usize {
    ((rng.next_open01() * n as f64) as usize).min(n - 1)
}

/// Incrementally assembles a network document.
#[derive(Debug, Clone)]
pub struct DocumentBuilder {
    doc: NetworkDocument,
    intra: BTreeMap<(String, Phase, Phase), Complex64>,
}

impl DocumentBuilder {
    pub fn new(base_mva: f64) -> Self {
        Self {
            doc: NetworkDocument {
                base_mva,
                buses: Vec::new(),
                branches: Vec::new(),
            },
            intra: BTreeMap::new(),
        }
    }

    pub fn bus(&mut self, id: &str, phases: &[Phase], base_kv: f64) -> &mut Self {
        let head = self.doc.buses.is_empty();
        self.doc.buses.push(BusRecord {
            id: id.to_string(),
            phases: phases.to_vec(),
            feeder_head: head,
            base_kv,
        });
        self
    }

    /// Single node-to-node branch with series impedance `z` (per unit).
    pub fn branch(
        &mut self,
        id: &str,
        from: (&str, Phase),
        to: (&str, Phase),
        z: Complex64,
    ) -> &mut Self {
        self.push(id, from, to, z, 0.0, false)
    }

    pub fn shunted_branch(
        &mut self,
        id: &str,
        from: (&str, Phase),
        to: (&str, Phase),
        z: Complex64,
        shunt_b: f64,
    ) -> &mut Self {
        self.push(id, from, to, z, shunt_b, false)
    }

    pub fn switch(
        &mut self,
        id: &str,
        from: (&str, Phase),
        to: (&str, Phase),
        z: Complex64,
        closed: bool,
    ) -> &mut Self {
        self.push(id, from, to, z, 0.0, true);
        self.doc.branches.last_mut().expect("just pushed").closed = closed;
        self
    }

    fn push(
        &mut self,
        id: &str,
        from: (&str, Phase),
        to: (&str, Phase),
        z: Complex64,
        shunt_b: f64,
        sw: bool,
    ) -> &mut Self {
        self.doc.branches.push(BranchRecord {
            id: id.to_string(),
            from: NodeRef {
                bus: from.0.to_string(),
                phase: from.1,
            },
            to: NodeRef {
                bus: to.0.to_string(),
                phase: to.1,
            },
            r: z.re,
            x: z.im,
            shunt_b,
            is_switch: sw,
            closed: true,
        });
        self
    }

    /// Coupled multiphase series element with impedance matrix `z` over
    /// `phases`, decomposed into node-pair branches: one per phase pair
    /// across the element (admittance `Y[p][q]`) and intra-bus pairs
    /// (admittance `−Y[p][q]`), which are merged per bus at [`build`].
    ///
    /// [`build`]: DocumentBuilder::build
    pub fn coupled(
        &mut self,
        id: &str,
        from: &str,
        to: &str,
        phases: &[Phase],
        z: &DMatrix<Complex64>,
    ) -> &mut Self {
        let y = z
            .clone()
            .try_inverse()
            .expect("coupled impedance matrix is invertible");
        for (p, &pp) in phases.iter().enumerate() {
            for (q, &pq) in phases.iter().enumerate() {
                let ypq = y[(p, q)];
                if ypq.norm() == 0.0 {
                    continue;
                }
                self.push(
                    &format!("{id}.{pp}{pq}"),
                    (from, pp),
                    (to, pq),
                    ypq.inv(),
                    0.0,
                    false,
                );
                if p < q {
                    for bus in [from, to] {
                        *self.intra.entry((bus.to_string(), pp, pq)).or_default() -= ypq;
                    }
                }
            }
        }
        self
    }

    pub fn build(&self) -> NetworkDocument {
        let mut doc = self.doc.clone();
        for ((bus, p, q), y) in &self.intra {
            if y.norm() > 0.0 {
                doc.branches.push(BranchRecord {
                    id: format!("{bus}.{p}{q}"),
                    from: NodeRef {
                        bus: bus.clone(),
                        phase: *p,
                    },
                    to: NodeRef {
                        bus: bus.clone(),
                        phase: *q,
                    },
                    r: y.inv().re,
                    x: y.inv().im,
                    shunt_b: 0.0,
                    is_switch: false,
                    closed: true,
                });
            }
        }
        doc
    }

    pub fn model(&self) -> NetworkModel {
        NetworkModel::from_document(&self.build()).expect("generated network is valid")
    }
}

const ABC: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

fn ohm_per_mile(rows: &[[(f64, f64); 3]; 3]) -> DMatrix<Complex64> {
    DMatrix::from_fn(3, 3, |i, j| c(rows[i][j].0, rows[i][j].1))
}

/// Sub-matrix over the listed phase positions, scaled by `scale`.
fn phase_block(z: &DMatrix<Complex64>, idx: &[usize], scale: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| z[(idx[i], idx[j])] * scale)
}

/// IEEE 13-node test feeder: 15 buses (including the source bus and the
/// regulator output), 38 nodes and 107 node-pair branches with the 671–692
/// switch closed. Line charging is neglected.
pub fn ieee13() -> NetworkDocument {
    let z601 = ohm_per_mile(&[
        [(0.3465, 1.0179), (0.1560, 0.5017), (0.1580, 0.4236)],
        [(0.1560, 0.5017), (0.3375, 1.0478), (0.1535, 0.3849)],
        [(0.1580, 0.4236), (0.1535, 0.3849), (0.3414, 1.0348)],
    ]);
    let z602 = ohm_per_mile(&[
        [(0.7526, 1.1814), (0.1580, 0.4236), (0.1560, 0.5017)],
        [(0.1580, 0.4236), (0.7475, 1.1983), (0.1535, 0.3849)],
        [(0.1560, 0.5017), (0.1535, 0.3849), (0.7436, 1.2112)],
    ]);
    // 603/604 share one two-wire geometry; entries listed for the used phases
    let z603 = ohm_per_mile(&[
        [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
        [(0.0, 0.0), (1.3294, 1.3471), (0.2066, 0.4591)],
        [(0.0, 0.0), (0.2066, 0.4591), (1.3238, 1.3569)],
    ]);
    let z604 = ohm_per_mile(&[
        [(1.3238, 1.3569), (0.0, 0.0), (0.2066, 0.4591)],
        [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
        [(0.2066, 0.4591), (0.0, 0.0), (1.3294, 1.3471)],
    ]);
    let z606 = ohm_per_mile(&[
        [(0.7982, 0.4463), (0.3192, 0.0328), (0.2849, -0.0143)],
        [(0.3192, 0.0328), (0.7891, 0.4041), (0.3192, 0.0328)],
        [(0.2849, -0.0143), (0.3192, 0.0328), (0.7982, 0.4463)],
    ]);
    let z605 = c(1.3292, 1.3475);
    let z607 = c(1.3425, 0.5124);

    let zbase = 4.16 * 4.16 / 5.0;
    let mile = |ft: f64| ft / 5280.0 / zbase;
    let mut b = DocumentBuilder::new(5.0);
    for (id, ph, kv) in [
        ("sourcebus", &ABC[..], 4.16),
        ("650", &ABC[..], 4.16),
        ("rg60", &ABC[..], 4.16),
        ("632", &ABC[..], 4.16),
        ("633", &ABC[..], 4.16),
        ("634", &ABC[..], 0.48),
        ("645", &[Phase::B, Phase::C][..], 4.16),
        ("646", &[Phase::B, Phase::C][..], 4.16),
        ("671", &ABC[..], 4.16),
        ("680", &ABC[..], 4.16),
        ("684", &[Phase::A, Phase::C][..], 4.16),
        ("611", &[Phase::C][..], 4.16),
        ("652", &[Phase::A][..], 4.16),
        ("692", &ABC[..], 4.16),
        ("675", &ABC[..], 4.16),
    ] {
        b.bus(id, ph, kv);
    }
    // Thevenin source impedance with zero-sequence coupling
    let (z1, z0) = (c(0.001, 0.008), c(0.003, 0.024));
    let (zs, zm) = ((z1 * 2.0 + z0) / 3.0, (z0 - z1) / 3.0);
    let zsrc = DMatrix::from_fn(3, 3, |i, j| if i == j { zs } else { zm });
    b.coupled("src", "sourcebus", "650", &ABC, &zsrc);
    for p in ABC {
        b.branch(
            &format!("reg.{p}"),
            ("650", p),
            ("rg60", p),
            c(0.001, 0.003),
        );
        b.branch(&format!("xfm1.{p}"), ("633", p), ("634", p), c(0.11, 0.2));
    }
    let all = [0usize, 1, 2];
    b.coupled(
        "632-rg60",
        "rg60",
        "632",
        &ABC,
        &phase_block(&z601, &all, mile(2000.0)),
    );
    b.coupled(
        "632-633",
        "632",
        "633",
        &ABC,
        &phase_block(&z602, &all, mile(500.0)),
    );
    b.coupled(
        "632-645",
        "632",
        "645",
        &[Phase::B, Phase::C],
        &phase_block(&z603, &[1, 2], mile(500.0)),
    );
    b.coupled(
        "645-646",
        "645",
        "646",
        &[Phase::B, Phase::C],
        &phase_block(&z603, &[1, 2], mile(300.0)),
    );
    b.coupled(
        "632-671",
        "632",
        "671",
        &ABC,
        &phase_block(&z601, &all, mile(2000.0)),
    );
    b.coupled(
        "671-680",
        "671",
        "680",
        &ABC,
        &phase_block(&z601, &all, mile(1000.0)),
    );
    b.coupled(
        "671-684",
        "671",
        "684",
        &[Phase::A, Phase::C],
        &phase_block(&z604, &[0, 2], mile(300.0)),
    );
    b.branch(
        "684-611.C",
        ("684", Phase::C),
        ("611", Phase::C),
        z605 * mile(300.0),
    );
    b.branch(
        "684-652.A",
        ("684", Phase::A),
        ("652", Phase::A),
        z607 * mile(800.0),
    );
    b.coupled(
        "692-675",
        "692",
        "675",
        &ABC,
        &phase_block(&z606, &all, mile(500.0)),
    );
    for p in ABC {
        b.switch(
            &format!("sw671-692.{p}"),
            ("671", p),
            ("692", p),
            c(0.001, 0.001),
            true,
        );
    }
    b.build()
}

/// Single-phase bus with `A` phase only.
const A: [Phase; 1] = [Phase::A];

/// Random single-phase tree: bus `i > 0` attaches to a uniformly chosen
/// earlier bus, biased towards recent buses to give feeder-like depth.
pub fn random_tree_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = SplitMix64::new(sub_seed(seed, "tree"));
    (1..n)
        .map(|i| {
            let window = i.min(6);
            let parent = if rng.next_open01() < 0.7 {
                i - 1 - below(&mut rng, window)
            } else {
                below(&mut rng, i)
            };
            (parent, i)
        })
        .collect()
}

fn bus_name(i: usize) -> String {
    format!("b{i}")
}

/// Single-phase radial feeder of `n` buses with generated impedances.
pub fn radial_feeder(n: usize, seed: u64) -> NetworkDocument {
    let mut rng = SplitMix64::new(sub_seed(seed, "feeder-impedance"));
    let mut b = DocumentBuilder::new(1.0);
    for i in 0..n {
        b.bus(&bus_name(i), &A, 12.47);
    }
    for (p, i) in random_tree_edges(n, seed) {
        let r = uniform(&mut rng, 0.002, 0.01);
        let x = r * uniform(&mut rng, 1.0, 2.5);
        b.branch(
            &format!("{}-{}", bus_name(p), bus_name(i)),
            (&bus_name(p), Phase::A),
            (&bus_name(i), Phase::A),
            c(r, x),
        );
    }
    b.build()
}

/// Parameters of [`random_network`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomNetworkSpec {
    pub buses: usize,
    /// Extra edges closing loops (0 gives a radial network).
    pub extra_edges: usize,
    /// Make some buses three-phase with coupled lines between them.
    pub multiphase: bool,
    /// Give branches a nonzero shunt susceptance.
    pub shunt: bool,
}

/// Random network for identity and property tests.
pub fn random_network(spec: RandomNetworkSpec, seed: u64) -> NetworkDocument {
    let mut rng = SplitMix64::new(sub_seed(seed, "random-network"));
    let phases: Vec<Vec<Phase>> = (0..spec.buses)
        .map(|i| {
            if spec.multiphase && (i == 0 || rng.next_open01() < 0.4) {
                ABC.to_vec()
            } else {
                vec![ABC[below(&mut rng, 3)]]
            }
        })
        .collect();
    let mut b = DocumentBuilder::new(1.0);
    for (i, ph) in phases.iter().enumerate() {
        b.bus(&bus_name(i), ph, 1.0);
    }
    let mut edges: BTreeSet<(usize, usize)> =
        random_tree_edges(spec.buses, seed).into_iter().collect();
    let mut guard = 0;
    while edges.len() < spec.buses - 1 + spec.extra_edges && guard < 100 * (spec.extra_edges + 1) {
        guard += 1;
        let (i, j) = (below(&mut rng, spec.buses), below(&mut rng, spec.buses));
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    for (k, &(i, j)) in edges.iter().enumerate() {
        let (bi, bj) = (bus_name(i), bus_name(j));
        let common: Vec<Phase> = phases[i]
            .iter()
            .filter(|p| phases[j].contains(p))
            .copied()
            .collect();
        let r = uniform(&mut rng, 0.005, 0.05);
        let x = r * uniform(&mut rng, 0.5, 3.0);
        let shunt = if spec.shunt {
            uniform(&mut rng, 0.001, 0.02)
        } else {
            0.0
        };
        if common.len() == 3 {
            let zs = c(r, x);
            let zm = zs * uniform(&mut rng, 0.2, 0.4);
            let z = DMatrix::from_fn(3, 3, |p, q| if p == q { zs } else { zm });
            b.coupled(&format!("l{k}"), &bi, &bj, &ABC, &z);
        } else {
            // connect the first phases of each end; a single-phase lateral
            // may change phase label through a transformer
            let (pi, pj) = match common.first() {
                Some(&p) => (p, p),
                None => (phases[i][0], phases[j][0]),
            };
            b.shunted_branch(&format!("l{k}"), (&bi, pi), (&bj, pj), c(r, x), shunt);
        }
    }
    b.build()
}

/// Tree over `n` single-phase buses, identical in topology to
/// [`random_tree_edges`], used for partition tests.
pub fn random_tree(n: usize, seed: u64) -> NetworkDocument {
    let mut b = DocumentBuilder::new(1.0);
    for i in 0..n {
        b.bus(&bus_name(i), &A, 1.0);
    }
    for (p, i) in random_tree_edges(n, seed) {
        b.branch(
            &format!("{p}-{i}"),
            (&bus_name(p), Phase::A),
            (&bus_name(i), Phase::A),
            c(0.01, 0.02),
        );
    }
    b.build()
}

/// Chain `b0 – b1 – … – b(n−1)`.
pub fn chain(n: usize) -> NetworkDocument {
    let mut b = DocumentBuilder::new(1.0);
    for i in 0..n {
        b.bus(&bus_name(i), &A, 1.0);
    }
    for i in 1..n {
        b.branch(
            &format!("{}-{i}", i - 1),
            (&bus_name(i - 1), Phase::A),
            (&bus_name(i), Phase::A),
            c(0.01, 0.02),
        );
    }
    b.build()
}

/// 41-bus radial system with buses numbered 1–39, 50 and 51, where bus 50
/// connects to bus 3 and to the leaf 51.
pub fn radial41() -> NetworkDocument {
    let ids: Vec<String> = (1..=39)
        .map(|i| i.to_string())
        .chain(["50".into(), "51".into()])
        .collect();
    let mut rng = SplitMix64::new(sub_seed(41, "radial41"));
    let mut b = DocumentBuilder::new(10.0);
    for id in &ids {
        b.bus(id, &A, 13.8);
    }
    let mut edges = Vec::new();
    for (p, i) in random_tree_edges(39, 41) {
        edges.push((ids[p].clone(), ids[i].clone()));
    }
    edges.push(("3".into(), "50".into()));
    edges.push(("50".into(), "51".into()));
    for (p, i) in edges {
        let r = uniform(&mut rng, 0.005, 0.03);
        let x = r * uniform(&mut rng, 1.5, 3.0);
        b.branch(&format!("{p}-{i}"), (&p, Phase::A), (&i, Phase::A), c(r, x));
    }
    b.build()
}

/// Branch list of the IEEE 30-bus system (41 branches).
pub const IEEE30_BRANCHES: [(usize, usize); 41] = [
    (1, 2),
    (1, 3),
    (2, 4),
    (3, 4),
    (2, 5),
    (2, 6),
    (4, 6),
    (5, 7),
    (6, 7),
    (6, 8),
    (6, 9),
    (6, 10),
    (9, 11),
    (9, 10),
    (4, 12),
    (12, 13),
    (12, 14),
    (12, 15),
    (12, 16),
    (14, 15),
    (16, 17),
    (15, 18),
    (18, 19),
    (19, 20),
    (10, 20),
    (10, 17),
    (10, 21),
    (10, 22),
    (21, 22),
    (15, 23),
    (22, 24),
    (23, 24),
    (24, 25),
    (25, 26),
    (25, 27),
    (28, 27),
    (27, 29),
    (27, 30),
    (29, 30),
    (8, 28),
    (6, 28),
];

/// IEEE 30-bus topology with generated impedances and no line charging.
pub fn ieee30() -> NetworkDocument {
    let mut rng = SplitMix64::new(sub_seed(30, "ieee30"));
    let mut b = DocumentBuilder::new(100.0);
    for i in 1..=30 {
        b.bus(&i.to_string(), &A, 132.0);
    }
    for (f, t) in IEEE30_BRANCHES {
        let r = uniform(&mut rng, 0.01, 0.08);
        let x = r * uniform(&mut rng, 2.0, 4.0);
        b.branch(
            &format!("{f}-{t}"),
            (&f.to_string(), Phase::A),
            (&t.to_string(), Phase::A),
            c(r, x),
        );
    }
    b.build()
}

/// Ten-bus meshed single-phase network with zero shunt (bus-level ring with
/// two laterals), used for bad-data scenarios.
pub fn ten_bus() -> NetworkDocument {
    let mut b = DocumentBuilder::new(10.0);
    for i in 1..=10 {
        b.bus(&i.to_string(), &A, 11.0);
    }
    let lines = [
        (1, 2, 0.010, 0.030),
        (2, 3, 0.012, 0.036),
        (3, 4, 0.015, 0.040),
        (4, 5, 0.011, 0.033),
        (5, 6, 0.013, 0.031),
        (6, 1, 0.014, 0.042),
        (3, 7, 0.020, 0.045),
        (7, 8, 0.018, 0.040),
        (5, 9, 0.016, 0.038),
        (9, 10, 0.022, 0.050),
        (2, 5, 0.017, 0.035),
    ];
    for (f, t, r, x) in lines {
        b.branch(
            &format!("{f}-{t}"),
            (&f.to_string(), Phase::A),
            (&t.to_string(), Phase::A),
            c(r, x),
        );
    }
    b.build()
}

/// Ground-truth phasors: a random walk from the feeder head along a
/// breadth-first spanning tree, each hop lowering the magnitude by
/// 0.001–0.005 pu and the angle by 0.05–0.3°. Phase B and C start at
/// −120° and +120°.
pub fn truth_state(model: &NetworkModel, seed: u64) -> Vec<Complex64> {
    let mut rng = SplitMix64::new(sub_seed(seed, "truth-state"));
    let adj = crate::network::adjacency(model);
    let head = model.feeder_head();
    let mut mag: HashMap<(usize, Phase), f64> = HashMap::new();
    let mut ang: HashMap<(usize, Phase), f64> = HashMap::new();
    let mut bus_mag = vec![0.0; model.buses.len()];
    let mut bus_ang = vec![0.0; model.buses.len()];
    bus_mag[head] = uniform(&mut rng, 1.0, 1.03);
    let mut seen = vec![false; model.buses.len()];
    seen[head] = true;
    let mut queue = std::collections::VecDeque::from([head]);
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                bus_mag[j] = bus_mag[i] - uniform(&mut rng, 0.001, 0.005);
                bus_ang[j] = bus_ang[i] - uniform(&mut rng, 0.05, 0.3);
                queue.push_back(j);
            }
        }
    }
    for (bi, bus) in model.buses.iter().enumerate() {
        for &p in &bus.phases {
            // small per-phase imbalance
            mag.insert((bi, p), bus_mag[bi] + uniform(&mut rng, -0.002, 0.002));
            ang.insert(
                (bi, p),
                bus_ang[bi] + p.nominal_angle_deg() + uniform(&mut rng, -0.05, 0.05),
            );
        }
    }
    model
        .nodes
        .iter()
        .map(|n| {
            let m = mag[&(n.bus, n.phase)];
            let mut a = ang[&(n.bus, n.phase)];
            if n.bus == head {
                a = n.phase.nominal_angle_deg();
            }
            Complex64::from_polar(m, a.to_radians())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ieee13_dimensions() {
        let m = NetworkModel::from_document(&ieee13()).unwrap();
        assert_eq!(m.buses.len(), 15);
        assert_eq!(m.node_count(), 38);
        assert_eq!(m.branch_count(), 107);
    }

    #[test]
    fn named_systems_are_valid() {
        let m = NetworkModel::from_document(&radial41()).unwrap();
        assert_eq!((m.node_count(), m.branch_count()), (41, 40));
        let m = NetworkModel::from_document(&ieee30()).unwrap();
        assert_eq!((m.node_count(), m.branch_count()), (30, 41));
        let m = NetworkModel::from_document(&ten_bus()).unwrap();
        assert_eq!(m.node_count(), 10);
        let m = NetworkModel::from_document(&radial_feeder(110, 5)).unwrap();
        assert_eq!(m.branch_count(), 109);
    }

    #[test]
    fn truth_head_is_reference() {
        let m = NetworkModel::from_document(&ieee13()).unwrap();
        let v = truth_state(&m, 1);
        let head = &m.buses[m.feeder_head()];
        assert!(v[head.nodes[0]].im.abs() < 1e-15);
        assert_eq!(v, truth_state(&m, 1));
    }
}
