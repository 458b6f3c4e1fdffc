//! Embedded primal barrier solver for the relaxed estimation problem
//!
//! ```text
//! minimise  φ(W) = Σ w_i (z_i − ⟨A_i, W⟩)²   subject to  W ⪰ 0,  W[N'+a, ·] = 0
//! ```
//!
//! Anchored rows and columns are removed, and the remaining problem is solved
//! by Newton's method on `F_μ(W) = φ(W) − μ·logdet W` for a geometrically
//! decreasing μ. The Newton system is reduced to the measurement space: with
//! `a_i = ⟨A_i, W⟩` and `K_ij = Tr(A_i W A_j W)`, the step is
//! `S = W + W C W` where `C = Σ c_i A_i` and
//! `(K + (μ/2)·diag(1/w)) c = z − 2a`.
//! Each `A_i` touches only a handful of rows, so `K` is assembled from small
//! dense blocks.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::scalar::Scalar;
use crate::sdp::{LiftedState, SdpProblem};

/// Starting point of the barrier iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialW<T> {
    /// Identity scaled to trace `2N'`, the lifted analogue of a flat start.
    IdentityScaled,
    /// A previous solution; shifted slightly towards the identity so it is
    /// strictly inside the cone.
    WarmStart(DMatrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    /// Upper limit on Newton steps.
    pub max_iterations: usize,
    /// Target for the barrier complementarity gap `n·μ`, relative to
    /// `max(1, φ)` in median-normalised weights.
    pub convergence_tol: T,
    /// Factor applied to μ after each centring stage, in (0, 1).
    pub barrier_reduction: T,
    pub initial_w: InitialW<T>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_tol: T::of(1e-9),
            barrier_reduction: T::of(0.2),
            initial_w: InitialW::IdentityScaled,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.max_iterations >= 1
            && self.convergence_tol > T::zero()
            && self.barrier_reduction > T::zero()
            && self.barrier_reduction < T::one();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Solver(format!(
                "invalid solver configuration (max_iterations {}, tol {}, reduction {})",
                self.max_iterations,
                self.convergence_tol.as_f64(),
                self.barrier_reduction.as_f64()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub w: LiftedState<T>,
    /// `Σ (z_i − ⟨A_i, W⟩)²/σ_i²` at the returned iterate.
    pub objective: T,
    /// Newton steps taken.
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective after each completed centring stage.
    pub objective_trace: Vec<T>,
}

/// Interface for solvers of the relaxed problem, so an external conic
/// solver can stand in for the embedded one.
pub trait ConicSolver<T: Scalar>: Sync {
    fn solve(&self, problem: &SdpProblem<T>, config: &SolverConfig<T>) -> SolveReport<T>;
}

/// The embedded barrier solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct BarrierSolver;

impl<T: Scalar> ConicSolver<T> for BarrierSolver {
    fn solve(&self, problem: &SdpProblem<T>, config: &SolverConfig<T>) -> SolveReport<T> {
        solve(problem, config)
    }
}

/// One least-squares term restricted to its support in the reduced space.
struct LocalTerm<T> {
    support: Vec<usize>,
    /// Dense symmetric block `A[support, support]`.
    block: DMatrix<T>,
    z: T,
    w: T,
}

struct Workspace<T> {
    terms: Vec<LocalTerm<T>>,
    n: usize,
}

impl<T: Scalar> Workspace<T> {
    fn new(problem: &SdpProblem<T>) -> (Self, Vec<usize>) {
        let nodes = problem.node_count();
        let removed: Vec<usize> = problem.anchors.iter().map(|&a| nodes + a).collect();
        let mut map = vec![usize::MAX; problem.dim];
        let mut keep = Vec::with_capacity(problem.dim);
        for (i, slot) in map.iter_mut().enumerate() {
            if !removed.contains(&i) {
                *slot = keep.len();
                keep.push(i);
            }
        }
        // Median-normalised weights keep μ on a problem-independent scale.
        let mut raw: Vec<T> = problem
            .terms
            .iter()
            .map(|t| T::one() / (t.sigma * t.sigma))
            .collect();
        let median = {
            let mut s = raw.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            if s.is_empty() {
                T::one()
            } else {
                s[s.len() / 2]
            }
        };
        for w in &mut raw {
            *w /= median;
        }
        let terms = problem
            .terms
            .iter()
            .zip(raw)
            .map(|(t, w)| {
                let entries: Vec<(usize, usize, T)> =
                    t.a.entries()
                        .iter()
                        .filter(|e| map[e.0] != usize::MAX && map[e.1] != usize::MAX)
                        .map(|&(r, c, v)| (map[r], map[c], v))
                        .collect();
                let mut support: Vec<usize> = entries.iter().flat_map(|e| [e.0, e.1]).collect();
                support.sort_unstable();
                support.dedup();
                let pos = |g: usize| support.binary_search(&g).expect("in support");
                let s = support.len();
                let mut block = DMatrix::zeros(s, s);
                for &(r, c, v) in &entries {
                    let (p, q) = (pos(r), pos(c));
                    block[(p, q)] = v;
                    block[(q, p)] = v;
                }
                LocalTerm {
                    support,
                    block,
                    z: t.z,
                    w,
                }
            })
            .collect();
        (
            Self {
                terms,
                n: keep.len(),
            },
            keep,
        )
    }

    /// `P_i = A_i · W[S_i, :]` for every term.
    fn products(&self, w: &DMatrix<T>) -> Vec<DMatrix<T>> {
        self.terms
            .iter()
            .map(|t| {
                let s = t.support.len();
                let rows = DMatrix::from_fn(s, self.n, |p, c| w[(t.support[p], c)]);
                &t.block * rows
            })
            .collect()
    }

    fn values(&self, prods: &[DMatrix<T>]) -> DVector<T> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().zip(prods).map(|(t, p)| {
                t.support
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (a, &g)| acc + p[(a, g)])
            }),
        )
    }

    fn values_of(&self, w: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| {
                let mut acc = T::zero();
                for (p, &gp) in t.support.iter().enumerate() {
                    for (q, &gq) in t.support.iter().enumerate() {
                        acc += t.block[(p, q)] * w[(gp, gq)];
                    }
                }
                acc
            }),
        )
    }

    fn phi(&self, a: &DVector<T>) -> T {
        self.terms
            .iter()
            .zip(a.iter())
            .fold(T::zero(), |acc, (t, &ai)| {
                acc + t.w * (t.z - ai) * (t.z - ai)
            })
    }

    /// `K_ij = Tr(A_i W A_j W) = Σ_ab P_i[a, S_j b] · P_j[b, S_i a]`.
    fn gram(&self, prods: &[DMatrix<T>]) -> DMatrix<T> {
        let m = self.terms.len();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            let (si, pi) = (&self.terms[i].support, &prods[i]);
            for j in i..m {
                let (sj, pj) = (&self.terms[j].support, &prods[j]);
                let mut acc = T::zero();
                for (a, &ga) in si.iter().enumerate() {
                    for (b, &gb) in sj.iter().enumerate() {
                        acc += pi[(a, gb)] * pj[(b, ga)];
                    }
                }
                k[(i, j)] = acc;
                k[(j, i)] = acc;
            }
        }
        k
    }
}

fn is_positive_definite<T: Scalar>(w: &DMatrix<T>) -> bool {
    Cholesky::new(w.clone()).is_some()
}

/// Solves `(K + diag(d)) c = rhs`. `K` is a Gram matrix that becomes
/// numerically semidefinite near a rank-one optimum, so the factorisation
/// carries a diagonal shift at round-off level (raised if still needed) and
/// two rounds of iterative refinement against the unshifted system remove
/// its effect. The factorisation itself runs in `f64`.
fn solve_spd<T: Scalar>(k: &DMatrix<T>, d: &DVector<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    use faer::linalg::solvers::Solve;
    let m = k.nrows();
    let mut shifted = k.clone();
    for i in 0..m {
        shifted[(i, i)] += d[i];
    }
    let mut kk = faer::Mat::<f64>::from_fn(m, m, |i, j| shifted[(i, j)].as_f64());
    let scale = (0..m).fold(0.0_f64, |acc, i| acc.max(kk[(i, i)].abs()));
    let mut jitter = scale * f64::EPSILON * m as f64;
    let mut applied = 0.0;
    for _ in 0..6 {
        for i in 0..m {
            kk[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Ok(llt) = kk.llt(faer::Side::Lower) {
            let solve = |r: &DVector<T>| -> DVector<T> {
                let b = faer::Mat::<f64>::from_fn(m, 1, |i, _| r[i].as_f64());
                let x = llt.solve(&b);
                DVector::from_fn(m, |i, _| T::of(x[(i, 0)]))
            };
            let mut x = solve(rhs);
            for _ in 0..2 {
                let res = rhs - &shifted * &x;
                x += solve(&res);
            }
            return Some(x);
        }
        jitter *= 100.0;
    }
    None
}

/// Exact minimisation of `F_μ(W + αS)` over the feasible step range.
///
/// With `γ` the eigenvalues of `L⁻¹ S L⁻ᵀ` (`W = L Lᵀ`) the barrier term is
/// `−μ Σ log(1 + αγ_j)` and the data term is the quadratic
/// `Σ w_i (r_i − α s_i)²`, so the one-dimensional problem is solved by a
/// safeguarded Newton iteration on its derivative.
fn line_search<T: Scalar>(
    w: &DMatrix<T>,
    step: &DMatrix<T>,
    ws: &Workspace<T>,
    r: &DVector<T>,
    s: &DVector<T>,
    mu: T,
) -> Option<T> {
    let l = Cholesky::new(w.clone())?.l();
    let x = l.solve_lower_triangular(step)?;
    let m = l.solve_lower_triangular(&x.transpose())?;
    let m = (&m + m.transpose()) * T::of(0.5);
    let gamma = nalgebra::SymmetricEigen::new(m).eigenvalues;
    let two = T::of(2.0);
    let (mut qa, mut qb) = (T::zero(), T::zero());
    for (i, term) in ws.terms.iter().enumerate() {
        qa += term.w * s[i] * s[i];
        qb += term.w * s[i] * r[i];
    }
    let deriv = |al: T| -> (T, T) {
        let mut d1 = two * (al * qa - qb);
        let mut d2 = two * qa;
        for &g in gamma.iter() {
            let den = T::one() + al * g;
            d1 -= mu * g / den;
            d2 += mu * g * g / (den * den);
        }
        (d1, d2)
    };
    let gmin = gamma.iter().fold(T::zero(), |m, &g| m.min(g));
    let cap = T::of(1e6);
    let mut hi = if gmin < T::zero() {
        (-T::one() / gmin * T::of(0.995)).min(cap)
    } else {
        cap
    };
    let mut lo = T::zero();
    if deriv(lo).0 >= T::zero() {
        return None;
    }
    if deriv(hi).0 <= T::zero() {
        return Some(hi);
    }
    let mut al = T::one().min(hi * T::of(0.5));
    for _ in 0..100 {
        let (d1, d2) = deriv(al);
        if d1 < T::zero() {
            lo = al;
        } else {
            hi = al;
        }
        let mut next = al - d1 / d2;
        if !(next > lo && next < hi) {
            next = (lo + hi) * T::of(0.5);
        }
        if (next - al).abs() <= T::of(1e-12) * al.max(T::one()) {
            return Some(next);
        }
        al = next;
    }
    Some(al)
}

/// Node groups coupled by at least one term; the lifted matrix of the
/// solution is block-diagonal over these groups.
fn coupled_groups<T: Scalar>(problem: &SdpProblem<T>) -> Vec<Vec<usize>> {
    let n = problem.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for t in &problem.terms {
        let nodes: Vec<usize> = t.a.support().into_iter().map(|i| i % n).collect();
        for w in nodes.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for k in 0..n {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(k);
    }
    groups.into_values().collect()
}

/// Runs the embedded barrier method.
pub fn solve<T: Scalar>(problem: &SdpProblem<T>, config: &SolverConfig<T>) -> SolveReport<T> {
    let (ws, keep) = Workspace::new(problem);
    let n = ws.n;
    let nt = T::of(n as f64);
    let two = T::of(2.0);
    let half = T::of(0.5);

    let mut w = match &config.initial_w {
        InitialW::IdentityScaled => DMatrix::identity(n, n),
        InitialW::WarmStart(full) => {
            let mut w = DMatrix::from_fn(n, n, |i, j| full[(keep[i], keep[j])]);
            let shift = T::of(1e-3) * (w.trace() / nt).max(T::one());
            for i in 0..n {
                w[(i, i)] += shift;
            }
            w
        }
    };
    if !is_positive_definite(&w) {
        w = DMatrix::identity(n, n);
    }

    let mut a = ws.values_of(&w);
    let mut phi = ws.phi(&a);
    let mut mu = phi.max(T::one()) / nt;
    let inv_w = DVector::from_iterator(ws.terms.len(), ws.terms.iter().map(|t| T::one() / t.w));
    let z = DVector::from_iterator(ws.terms.len(), ws.terms.iter().map(|t| t.z));
    let divergence = T::of(1e8) * nt;

    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let mut trace = Vec::new();
    // once the gap target is met, one more centring at the final μ with a
    // tight decrement target removes the remaining centring error
    let mut polishing = false;
    let mut polish_steps = 0;

    'outer: while iterations < config.max_iterations {
        // centring: Newton on F_μ until the decrement is small
        loop {
            if iterations >= config.max_iterations {
                break 'outer;
            }
            let prods = ws.products(&w);
            a = ws.values(&prods);
            let k = ws.gram(&prods);
            let rhs = &z - &a * two;
            let d = &inv_w * (mu * half);
            let Some(c) = solve_spd(&k, &d, &rhs) else {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            };
            let t = &a + &k * &c;
            let mut weighted = T::zero();
            for (i, term) in ws.terms.iter().enumerate() {
                weighted += term.w * (term.z - a[i]) * t[i];
            }
            let cw = c.dot(&a);
            let lambda_sq = (two * weighted + mu * (nt + cw)) / mu;
            let lambda = lambda_sq.max(T::zero()).sqrt();

            let mut cm = DMatrix::zeros(n, n);
            for (term, &ci) in ws.terms.iter().zip(c.iter()) {
                let s = &term.support;
                for p in 0..s.len() {
                    for q in 0..s.len() {
                        cm[(s[p], s[q])] += ci * term.block[(p, q)];
                    }
                }
            }
            let step = &w + &w * cm * &w;
            let step = (&step + step.transpose()) * half;

            let full_step = lambda < T::of(0.25);
            let mut alpha = if full_step {
                T::one()
            } else {
                let s_vals = ws.values_of(&step);
                let r = &z - &a;
                match line_search(&w, &step, &ws, &r, &s_vals, mu) {
                    Some(al) => al,
                    None => T::one() / (T::one() + lambda),
                }
            };
            let mut accepted = None;
            for _ in 0..60 {
                let cand = &w + &step * alpha;
                if is_positive_definite(&cand) {
                    accepted = Some(cand);
                    break;
                }
                alpha *= half;
            }
            iterations += 1;
            let Some(next) = accepted else {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            };
            w = next;
            if !w.iter().all(|v| v.is_finite()) || w.trace() > divergence {
                status = SolveStatus::NumericalFailure;
                break 'outer;
            }
            if polishing {
                polish_steps += 1;
                if lambda < T::of(1e-9) || polish_steps >= 8 {
                    break;
                }
            } else if full_step && lambda < T::of(1e-2) {
                break;
            }
        }
        a = ws.values_of(&w);
        phi = ws.phi(&a);
        trace.push(problem.objective(&expand(&w, &keep, problem.dim)));
        if polishing {
            status = SolveStatus::Converged;
            break;
        }
        if nt * mu <= config.convergence_tol * phi.max(T::one()) {
            polishing = true;
            continue;
        }
        mu *= config.barrier_reduction;
    }

    let full = expand(&w, &keep, problem.dim);
    let objective = problem.objective(&full);
    let groups = coupled_groups(problem);
    let rank1_ratio = crate::sdp::extract_state_grouped(&full, &groups, &problem.anchors)
        .map(|(_, r)| r)
        .unwrap_or_else(|_| T::one());
    log::debug!(
        "barrier solve: {} Newton steps, status {:?}, objective {:.3e}",
        iterations,
        status,
        objective.as_f64()
    );
    SolveReport {
        w: LiftedState {
            w: full,
            rank1_ratio,
        },
        objective,
        iterations,
        status,
        objective_trace: trace,
    }
}

fn expand<T: Scalar>(w: &DMatrix<T>, keep: &[usize], dim: usize) -> DMatrix<T> {
    let mut full = DMatrix::zeros(dim, dim);
    for (i, &gi) in keep.iter().enumerate() {
        for (j, &gj) in keep.iter().enumerate() {
            full[(gi, gj)] = w[(i, j)];
        }
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{SymSparse, Term};

    fn vsq_problem(readings: &[f64]) -> SdpProblem<f64> {
        let m = SymSparse::from_upper_triplets(2, [(0, 0, 1.0), (1, 1, 1.0)]);
        SdpProblem {
            dim: 2,
            terms: readings
                .iter()
                .map(|&z| Term {
                    a: m.clone(),
                    z,
                    sigma: 0.01,
                })
                .collect(),
            anchors: vec![0],
        }
    }

    #[test]
    fn single_node_magnitude() {
        let r = solve(&vsq_problem(&[1.0]), &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.w.w[(0, 0)] - 1.0).abs() < 1e-6, "{}", r.w.w);
        assert_eq!(r.w.w[(1, 1)], 0.0);
        assert!(r.objective < 1e-8);
    }

    #[test]
    fn conflicting_readings_average() {
        let r = solve(&vsq_problem(&[1.0, 1.1]), &SolverConfig::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(
            (r.w.w[(0, 0)] - 1.05).abs() < 1e-7,
            "{} {:?} {}",
            r.w.w,
            r.status,
            r.iterations
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SolverConfig::<f64> {
            barrier_reduction: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SolverConfig::<f64>::default().validate().is_ok());
    }
}
