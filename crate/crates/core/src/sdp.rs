//! Real symmetric coefficient matrices of the lifted formulation.
//!
//! With `X = [Re V; Im V]` and `W = X Xᵀ`, every injection, line flow and
//! squared voltage magnitude is a linear function `Tr(A W) = Xᵀ A X` of the
//! lifted matrix. The matrices are built from complex "pattern" matrices via
//!
//! ```text
//! lift(A) = ½ [ Re(A + Aᵀ)   Im(Aᵀ − A) ]
//!             [ Im(A − Aᵀ)   Re(A + Aᵀ) ]
//! ```
//!
//! which satisfies `Xᵀ lift(A) X = Re(Vᴴ A V)`. Flows follow the "drawn"
//! convention: `P_lm` is the power bus `l` draws from branch `l–m`, so the
//! injection at `l` equals minus the sum of its incident flows.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measurements::{Location, Measurement, MeasurementKind};
use crate::network::NetworkModel;
use crate::scalar::Scalar;

/// Sparse real symmetric matrix storing only the upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse<T> {
    dim: usize,
    /// `(row, col, value)` with `row <= col`, sorted and unique.
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> SymSparse<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from arbitrary `(row, col, value)` triplets describing a
    /// symmetric matrix; each off-diagonal pair may be given once in either
    /// triangle. Duplicates accumulate, exact zeros are dropped.
    pub fn from_upper_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Self {
        let mut map: HashMap<(usize, usize), T> = HashMap::new();
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet out of range");
            let key = if r <= c { (r, c) } else { (c, r) };
            *map.entry(key).or_insert_with(T::zero) += v;
        }
        let mut entries: Vec<_> = map
            .into_iter()
            .filter(|(_, v)| *v != T::zero())
            .map(|((r, c), v)| (r, c, v))
            .collect();
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        let key = if row <= col { (row, col) } else { (col, row) };
        self.entries
            .binary_search_by_key(&key, |e| (e.0, e.1))
            .map(|p| self.entries[p].2)
            .unwrap_or_else(|_| T::zero())
    }

    /// Sorted list of row/column indices touched by the matrix.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().flat_map(|e| [e.0, e.1]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// `Tr(A W)` for a symmetric `W`.
    pub fn trace_with(&self, w: &DMatrix<T>) -> T {
        let two = T::of(2.0);
        self.entries.iter().fold(T::zero(), |acc, &(r, c, v)| {
            if r == c {
                acc + v * w[(r, r)]
            } else {
                acc + two * v * w[(r, c)]
            }
        })
    }

    /// `xᵀ A x`.
    pub fn quad(&self, x: &DVector<T>) -> T {
        let two = T::of(2.0);
        self.entries.iter().fold(T::zero(), |acc, &(r, c, v)| {
            if r == c {
                acc + v * x[r] * x[r]
            } else {
                acc + two * v * x[r] * x[c]
            }
        })
    }

    /// `Σ coeff_k · A_k` over matrices of equal dimension.
    pub fn linear_combination<'a>(
        dim: usize,
        terms: impl IntoIterator<Item = (T, &'a SymSparse<T>)>,
    ) -> Self
    where
        T: 'a,
    {
        let triplets: Vec<_> = terms
            .into_iter()
            .flat_map(|(k, a)| a.entries.iter().map(move |&(r, c, v)| (r, c, k * v)))
            .collect();
        Self::from_upper_triplets(dim, triplets)
    }

    pub fn max_abs(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |m, e| if e.2.abs() > m { e.2.abs() } else { m })
    }
}

/// Lifts a complex `N×N` pattern, given as sparse entries, to the real
/// symmetric `2N×2N` matrix with `Xᵀ lift(A) X = Re(Vᴴ A V)`.
pub fn lift<T: Scalar>(n: usize, pattern: &[(usize, usize, Complex64)]) -> SymSparse<T> {
    let half = 0.5;
    let mut t = Vec::with_capacity(pattern.len() * 4);
    for &(l, m, a) in pattern {
        let re = T::of(half * a.re);
        let im = T::of(half * a.im);
        // symmetric part of Re(A) on both diagonal blocks
        t.push((l, m, re));
        t.push((n + l, n + m, re));
        // top-right block: ½ Im(Aᵀ − A)
        t.push((l, n + m, -im));
        t.push((m, n + l, im));
    }
    // from_upper_triplets folds each (l,m) into the upper triangle, so the
    // diagonal-block contributions of an off-diagonal entry appear once and
    // are counted twice by the symmetric storage — exactly ½(A + Aᵀ).
    // Diagonal entries need the full weight.
    let diag_fix = pattern
        .iter()
        .filter(|(l, m, _)| l == m)
        .flat_map(|&(l, _, a)| {
            let re = T::of(half * a.re);
            [(l, l, re), (n + l, n + l, re)]
        });
    let all: Vec<_> = t.into_iter().chain(diag_fix).collect();
    SymSparse::from_upper_triplets(2 * n, all)
}

/// Phasor state stacked as `X = [Re V; Im V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    pub x: DVector<T>,
}

impl<T: Scalar> StateVector<T> {
    pub fn from_phasors(v: &[Complex64]) -> Self {
        let n = v.len();
        let x = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                T::of(v[i].re)
            } else {
                T::of(v[i - n].im)
            }
        });
        Self { x }
    }

    pub fn node_count(&self) -> usize {
        self.x.len() / 2
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        let n = self.node_count();
        (0..n)
            .map(|k| Complex64::new(self.x[k].as_f64(), self.x[n + k].as_f64()))
            .collect()
    }

    pub fn lifted(&self) -> DMatrix<T> {
        &self.x * self.x.transpose()
    }
}

/// Solved lifted matrix together with its rank-1 quality gauge.
#[derive(Debug, Clone)]
pub struct LiftedState<T> {
    pub w: DMatrix<T>,
    /// `λ₂/λ₁` of `w`.
    pub rank1_ratio: T,
}

/// Coefficient matrices for every node and every directed closed-branch end.
#[derive(Debug, Clone)]
pub struct MeasurementMatrixSet<T> {
    node_count: usize,
    p_inj: Vec<SymSparse<T>>,
    q_inj: Vec<SymSparse<T>>,
    vsq: Vec<SymSparse<T>>,
    p_flow: Vec<SymSparse<T>>,
    q_flow: Vec<SymSparse<T>>,
    /// Directed end `(l, m)` to the index of its flow matrices.
    ends: HashMap<(usize, usize), usize>,
    components: Vec<Vec<usize>>,
}

impl<T: Scalar> MeasurementMatrixSet<T> {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Dimension `2N'` of the lifted space.
    pub fn dim(&self) -> usize {
        2 * self.node_count
    }

    /// `Y_k`.
    pub fn p_injection(&self, k: usize) -> &SymSparse<T> {
        &self.p_inj[k]
    }

    /// `Ȳ_k`.
    pub fn q_injection(&self, k: usize) -> &SymSparse<T> {
        &self.q_inj[k]
    }

    /// `M_k`.
    pub fn voltage_squared(&self, k: usize) -> &SymSparse<T> {
        &self.vsq[k]
    }

    /// `Y_lm`, if a closed branch joins `l` and `m`.
    pub fn p_flow(&self, l: usize, m: usize) -> Option<&SymSparse<T>> {
        self.ends.get(&(l, m)).map(|&i| &self.p_flow[i])
    }

    /// `Ȳ_lm`, if a closed branch joins `l` and `m`.
    pub fn q_flow(&self, l: usize, m: usize) -> Option<&SymSparse<T>> {
        self.ends.get(&(l, m)).map(|&i| &self.q_flow[i])
    }

    /// Node-level connected components; each needs its own angle anchor.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// The coefficient matrix of a measurement, or `None` for an unknown
    /// branch end or node.
    pub fn matrix_for(&self, kind: MeasurementKind, location: Location) -> Option<&SymSparse<T>> {
        match (kind, location) {
            (MeasurementKind::PInj, Location::Node(k)) => self.p_inj.get(k),
            (MeasurementKind::QInj, Location::Node(k)) => self.q_inj.get(k),
            (MeasurementKind::Vmag, Location::Node(k)) => self.vsq.get(k),
            (MeasurementKind::PFlow, Location::Branch { from, to }) => self.p_flow(from, to),
            (MeasurementKind::QFlow, Location::Branch { from, to }) => self.q_flow(from, to),
            _ => None,
        }
    }
}

/// Builds all coefficient matrices of a network.
pub fn build_matrix_set<T: Scalar>(model: &NetworkModel) -> MeasurementMatrixSet<T> {
    let n = model.node_count();
    let j = Complex64::new(0.0, 1.0);
    let mut p_inj = Vec::with_capacity(n);
    let mut q_inj = Vec::with_capacity(n);
    let mut vsq = Vec::with_capacity(n);
    for k in 0..n {
        let row: Vec<_> = model.ybus.row(k).iter().map(|&(m, y)| (k, m, y)).collect();
        let jrow: Vec<_> = row.iter().map(|&(a, b, y)| (a, b, j * y)).collect();
        p_inj.push(lift(n, &row));
        q_inj.push(lift(n, &jrow));
        vsq.push(SymSparse::from_upper_triplets(
            2 * n,
            [(k, k, T::one()), (n + k, n + k, T::one())],
        ));
    }
    let mut p_flow = Vec::new();
    let mut q_flow = Vec::new();
    let mut ends = HashMap::new();
    for (_, b) in model.closed_branches() {
        for (l, m) in [(b.from_node, b.to_node), (b.to_node, b.from_node)] {
            let ys = b.series_admittance;
            let pattern = [(l, l, -(ys + b.shunt_admittance)), (l, m, ys)];
            let jpattern = pattern.map(|(a, c, y)| (a, c, j * y));
            ends.insert((l, m), p_flow.len());
            p_flow.push(lift(n, &pattern));
            q_flow.push(lift(n, &jpattern));
        }
    }
    MeasurementMatrixSet {
        node_count: n,
        p_inj,
        q_inj,
        vsq,
        p_flow,
        q_flow,
        ends,
        components: model.node_components(),
    }
}

/// `Tr(A · XXᵀ) = Xᵀ A X`.
pub fn eval_measurement<T: Scalar>(a: &SymSparse<T>, x: &StateVector<T>) -> Result<T> {
    if a.dim() != x.x.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: x.x.len(),
        });
    }
    Ok(a.quad(&x.x))
}

/// Variable and equation counts of the lifted formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct VariableCounts {
    /// Free entries of a symmetric `2N'×2N'` matrix.
    pub total_sym: usize,
    /// Entries of `W` that any measurement can touch.
    pub distinct: usize,
    /// Largest number of distinct measurement functions.
    pub max_measurements: usize,
    /// Linearly independent equations available.
    pub independent: usize,
}

pub fn count_variables(node_count: usize, branch_count: usize) -> VariableCounts {
    let (n, m) = (node_count, branch_count);
    VariableCounts {
        total_sym: n * (2 * n + 1),
        distinct: 3 * n + 4 * m,
        max_measurements: 3 * n + 4 * m,
        independent: n + 2 * m,
    }
}

/// One weighted least-squares term `w (z − Tr(A W))²` with `w = 1/σ²`.
#[derive(Debug, Clone)]
pub struct Term<T> {
    pub a: SymSparse<T>,
    pub z: T,
    pub sigma: T,
}

/// The relaxed estimation problem: minimise `Σ (z_i − Tr(A_i W))²/σ_i²`
/// over `W ⪰ 0` with `W[N'+a, N'+a] = 0` for every anchor node `a`.
#[derive(Debug, Clone)]
pub struct SdpProblem<T> {
    pub dim: usize,
    pub terms: Vec<Term<T>>,
    /// Anchor node indices (angle fixed to zero).
    pub anchors: Vec<usize>,
}

impl<T: Scalar> SdpProblem<T> {
    pub fn node_count(&self) -> usize {
        self.dim / 2
    }

    /// `Σ (z_i − Tr(A_i W))²/σ_i²`.
    pub fn objective(&self, w: &DMatrix<T>) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| {
            let r = (t.z - t.a.trace_with(w)) / t.sigma;
            acc + r * r
        })
    }
}

/// Converts measurements into least-squares terms. Voltage magnitudes enter
/// squared with first-order propagated deviation `2|V|σ`.
pub fn assemble_problem<T: Scalar>(
    set: &MeasurementMatrixSet<T>,
    measurements: &[Measurement],
    anchors: &[usize],
) -> Result<SdpProblem<T>> {
    let mut terms = Vec::with_capacity(measurements.len());
    for (i, m) in measurements.iter().enumerate() {
        if !(m.sigma.is_finite() && m.sigma > 0.0) || !m.value.is_finite() {
            return Err(Error::InvalidVariance {
                index: i,
                sigma: m.sigma,
            });
        }
        let a = set.matrix_for(m.kind, m.location).ok_or_else(|| {
            Error::Schema(format!(
                "measurement {i} references an unknown node or branch end"
            ))
        })?;
        let (z, sigma) = match m.kind {
            MeasurementKind::Vmag => {
                let s = 2.0 * m.value.abs() * m.sigma;
                // a zero reading would give σ = 0; keep the magnitude σ instead
                (m.value * m.value, if s > 0.0 { s } else { m.sigma })
            }
            _ => (m.value, m.sigma),
        };
        terms.push(Term {
            a: a.clone(),
            z: T::of(z),
            sigma: T::of(sigma),
        });
    }
    let n = set.node_count();
    if let Some(&bad) = anchors.iter().find(|&&a| a >= n) {
        return Err(Error::InvalidReference(format!(
            "anchor node {bad} out of range"
        )));
    }
    for comp in set.components() {
        if !comp.iter().any(|k| anchors.contains(k)) {
            return Err(Error::MissingAnchor {
                nodes: comp.clone(),
            });
        }
    }
    let mut anchors = anchors.to_vec();
    anchors.sort_unstable();
    anchors.dedup();
    Ok(SdpProblem {
        dim: set.dim(),
        terms,
        anchors,
    })
}

/// Residual of one term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermResidual {
    pub residual: f64,
    pub normalized: f64,
}

/// `r_i = z_i − Tr(A_i W)` and `r_i/σ_i`.
pub fn compute_residuals<T: Scalar>(
    problem: &SdpProblem<T>,
    w: &DMatrix<T>,
) -> Result<Vec<TermResidual>> {
    if w.nrows() != problem.dim || w.ncols() != problem.dim {
        return Err(Error::DimensionMismatch {
            expected: problem.dim,
            found: w.nrows(),
        });
    }
    Ok(problem
        .terms
        .iter()
        .map(|t| {
            let r = t.z - t.a.trace_with(w);
            TermResidual {
                residual: r.as_f64(),
                normalized: (r / t.sigma).as_f64(),
            }
        })
        .collect())
}

/// Leading-eigenvector recovery over the whole matrix.
///
/// `X = √λ₁ v₁`, sign chosen so the first anchor has a positive real part;
/// returns `λ₂/λ₁` as the rank-1 quality gauge.
pub fn extract_state<T: Scalar>(w: &DMatrix<T>, anchors: &[usize]) -> Result<(StateVector<T>, T)> {
    let n = w.nrows() / 2;
    extract_state_grouped(w, &[(0..n).collect()], anchors)
}

/// Per-component recovery for block-diagonal lifted matrices: each node group
/// is decomposed separately and must contain an anchor that fixes its sign.
/// The reported ratio is the worst over groups.
pub fn extract_state_grouped<T: Scalar>(
    w: &DMatrix<T>,
    groups: &[Vec<usize>],
    anchors: &[usize],
) -> Result<(StateVector<T>, T)> {
    let n = w.nrows() / 2;
    if w.nrows() != 2 * n || w.ncols() != w.nrows() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows(),
            found: w.ncols(),
        });
    }
    let mut x = DVector::zeros(2 * n);
    let mut worst = T::zero();
    for group in groups {
        let idx: Vec<usize> = group
            .iter()
            .copied()
            .chain(group.iter().map(|k| n + k))
            .collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| w[(idx[i], idx[j])]);
        let eig = nalgebra::SymmetricEigen::new(sub);
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let l1 = eig.eigenvalues[order[0]];
        if l1.as_f64().is_nan() || l1 <= T::zero() {
            return Err(Error::DegenerateLifting {
                lambda: l1.as_f64(),
            });
        }
        let l2 = if order.len() > 1 {
            eig.eigenvalues[order[1]].max(T::zero())
        } else {
            T::zero()
        };
        let ratio = l2 / l1;
        if ratio > worst {
            worst = ratio;
        }
        let v = eig.eigenvectors.column(order[0]);
        let scale = l1.sqrt();
        let anchor_pos = group.iter().position(|k| anchors.contains(k));
        let sign = match anchor_pos {
            Some(p) if v[p] < T::zero() => -T::one(),
            Some(_) => T::one(),
            // no anchor: orient by the largest-magnitude real part
            None => {
                let p = (0..group.len())
                    .max_by(|&a, &b| {
                        v[a].abs()
                            .partial_cmp(&v[b].abs())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                if v[p] < T::zero() {
                    -T::one()
                } else {
                    T::one()
                }
            }
        };
        for (i, &g) in idx.iter().enumerate() {
            x[g] = sign * scale * v[i];
        }
    }
    Ok((StateVector { x }, worst))
}

/// Acceptance levels for the rank-1 ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankGate {
    /// At or below: accepted silently.
    pub accept: f64,
    /// Above: rejected as not a physical state.
    pub reject: f64,
}

impl Default for RankGate {
    fn default() -> Self {
        Self {
            accept: 1e-4,
            reject: 0.1,
        }
    }
}

impl RankGate {
    /// Logs a warning between the two levels and errors above `reject`.
    pub fn check(&self, ratio: f64) -> Result<()> {
        if !ratio.is_finite() || ratio > self.reject {
            return Err(Error::RankGate {
                ratio,
                limit: self.reject,
            });
        }
        if ratio > self.accept {
            log::warn!(
                "rank-1 quality ratio {ratio:.3e} exceeds {:.1e}; estimate may be unreliable",
                self.accept
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{parse_network, NetworkModel};

    fn two_node() -> NetworkModel {
        // y = 1 − j2  <=>  z = 0.2 + j0.4
        parse_network(
            r#"{"base_mva":1,"buses":[
                {"id":"1","phases":["A"],"feeder_head":true,"base_kv":1},
                {"id":"2","phases":["A"],"base_kv":1}],
              "branches":[{"id":"b","from":{"bus":"1","phase":"A"},"to":{"bus":"2","phase":"A"},"r":0.2,"x":0.4}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn lift_of_real_diagonal() {
        let a: SymSparse<f64> = lift(1, &[(0, 0, Complex64::new(0.3, 0.7))]);
        let d = a.to_dense();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.3]));
    }

    #[test]
    fn lift_matches_hermitian_form() {
        let pat = [
            (0, 1, Complex64::new(0.4, -1.3)),
            (2, 0, Complex64::new(-0.2, 0.5)),
            (1, 1, Complex64::new(1.1, 0.9)),
        ];
        let a: SymSparse<f64> = lift(3, &pat);
        let v = [
            Complex64::new(1.0, 0.2),
            Complex64::new(-0.3, 0.8),
            Complex64::new(0.5, -0.6),
        ];
        let expect: Complex64 = pat.iter().map(|&(l, m, y)| v[l].conj() * y * v[m]).sum();
        let x = StateVector::<f64>::from_phasors(&v);
        assert!((a.quad(&x.x) - expect.re).abs() < 1e-14);
        assert!((a.trace_with(&x.lifted()) - expect.re).abs() < 1e-14);
    }

    #[test]
    fn flat_start_has_no_flow() {
        let m = two_node();
        let set = build_matrix_set::<f64>(&m);
        let x = StateVector::from_phasors(&[Complex64::new(1.0, 0.0); 2]);
        for k in 0..2 {
            assert!(eval_measurement(set.p_injection(k), &x).unwrap().abs() < 1e-15);
            assert!(eval_measurement(set.q_injection(k), &x).unwrap().abs() < 1e-15);
            assert_eq!(eval_measurement(set.voltage_squared(k), &x).unwrap(), 1.0);
        }
        assert!(
            eval_measurement(set.p_flow(0, 1).unwrap(), &x)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn voltage_squared_reading() {
        let m = two_node();
        let set = build_matrix_set::<f64>(&m);
        let v0 = Complex64::from_polar(0.95, (-3.0f64).to_radians());
        let x = StateVector::from_phasors(&[v0, Complex64::new(1.0, 0.0)]);
        let got = eval_measurement(set.voltage_squared(0), &x).unwrap();
        assert!((got - 0.9025).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let set = build_matrix_set::<f64>(&two_node());
        let x = StateVector::<f64>::from_phasors(&[Complex64::new(1.0, 0.0)]);
        assert!(matches!(
            eval_measurement(set.voltage_squared(0), &x),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 2
            })
        ));
    }

    #[test]
    fn counts() {
        let c = count_variables(41, 40);
        assert_eq!((c.total_sym, c.distinct, c.independent), (3403, 283, 121));
        let c = count_variables(1, 0);
        assert_eq!((c.total_sym, c.distinct, c.independent), (3, 3, 1));
        assert_eq!(count_variables(117, 457).distinct, 2179);
    }

    #[test]
    fn extraction_recovers_rank_one() {
        let v = [
            Complex64::from_polar(1.02, 0.0),
            Complex64::from_polar(0.97, -0.1),
            Complex64::from_polar(0.95, 2.0),
        ];
        let x = StateVector::<f64>::from_phasors(&v);
        let (got, ratio) = extract_state(&x.lifted(), &[0]).unwrap();
        assert!(ratio < 1e-12);
        assert!((got.x - x.x).amax() < 1e-12);
    }

    #[test]
    fn extraction_of_rank_two() {
        let (_, ratio) = extract_state(&DMatrix::<f64>::identity(2, 2), &[0]).unwrap();
        assert!((ratio - 1.0).abs() < 1e-15);
        assert!(RankGate::default().check(ratio).is_err());
        assert!(matches!(
            extract_state(&DMatrix::<f64>::zeros(2, 2), &[0]),
            Err(Error::DegenerateLifting { .. })
        ));
    }

    #[test]
    fn missing_anchor_is_rejected() {
        let set = build_matrix_set::<f64>(&two_node());
        assert!(matches!(
            assemble_problem(&set, &[], &[]),
            Err(Error::MissingAnchor { .. })
        ));
        assert!(assemble_problem(&set, &[], &[1]).is_ok());
    }
}
