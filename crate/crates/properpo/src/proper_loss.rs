//! The Savage layer: binary and multiclass proper losses, Bayes-risk
//! potentials, canonical links, convex conjugates, Bregman divergences, and
//! grid-based numeric certification of properness.
//!
//! Conventions used throughout:
//!
//! - A binary loss is a pair of partial losses (l0, l1) on [0,1]; the
//!   pointwise risk for target p and prediction q is
//!   `L(p,q) = p*l1(q) + (1-p)*l0(q)`. Symmetric losses satisfy
//!   `l0(p) = l1(1-p)`.
//! - The Bayes risk is `L(p,p)` and the potential is `phi(p) = -L(p,p)`,
//!   convex whenever the loss is proper.
//! - The canonical link is `H(p) = l0(p) - l1(p)`, a subgradient selection
//!   of phi, and `l0 compose H^{-1} = phi*` (the convex conjugate).
//! - Losses unbounded at the simplex boundary use the +infinity convention
//!   there, with 0 * infinity = 0 inside expectations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::core_math::{simplex_grid, Monotonicity, ProbVector, ScalarFn};
use crate::{Error, Result};

/// Strictness margin coefficient: off-diagonal pairs must beat
/// `STRICT_DELTA * ||p - q||^2` for the strict verdict.
pub const STRICT_DELTA: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Binary losses
// ---------------------------------------------------------------------------

/// A pair of partial losses on [0,1] with metadata.
#[derive(Clone, Debug)]
pub struct BinaryLoss {
    pub id: String,
    /// Loss when the negative class is true, nondecreasing for proper losses.
    pub l0: ScalarFn,
    /// Loss when the positive class is true, nonincreasing for proper losses.
    pub l1: ScalarFn,
    pub symmetric: bool,
    pub strictly_proper_claimed: bool,
    /// Partial losses stay finite as p -> 0 / p -> 1.
    pub finite_endpoints: bool,
}

impl BinaryLoss {
    /// Pointwise risk p*l1(q) + (1-p)*l0(q), with the 0 * infinity = 0
    /// convention at the boundary.
    pub fn risk(&self, p: f64, q: f64) -> f64 {
        let mut acc = 0.0;
        if p > 0.0 {
            acc += p * self.l1.eval(q);
        }
        if p < 1.0 {
            acc += (1.0 - p) * self.l0.eval(q);
        }
        acc
    }

    /// Bayes risk L(p,p).
    pub fn bayes_risk(&self, p: f64) -> f64 {
        self.risk(p, p)
    }

    /// Max |l0(p) - l1(1-p)| over an interior grid of mesh `mesh`.
    pub fn symmetry_defect(&self, mesh: f64) -> f64 {
        let mut worst = 0.0f64;
        let mut p = mesh;
        while p < 1.0 - mesh / 2.0 {
            worst = worst.max((self.l0.eval(p) - self.l1.eval(1.0 - p)).abs());
            p += mesh;
        }
        worst
    }

    /// The two-class Savage form of this loss: l_1(q) = l1(q_1),
    /// l_2(q) = l0(q_1).
    pub fn to_multiclass(&self) -> MulticlassLoss {
        let l0 = self.l0.clone();
        let l1 = self.l1.clone();
        let l0j = self.l0.clone();
        let l1j = self.l1.clone();
        MulticlassLoss {
            id: self.id.clone(),
            n: 2,
            l: Arc::new(move |q: &[f64]| vec![l1.eval(q[0]), l0.eval(q[0])]),
            jac: Some(Arc::new(move |q: &[f64]| {
                vec![vec![l1j.deriv(q[0]), 0.0], vec![l0j.deriv(q[0]), 0.0]]
            })),
            separable: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Multiclass losses
// ---------------------------------------------------------------------------

/// A vector loss `l: simplex -> R^n` together with its selection `G = -l`.
#[derive(Clone)]
pub struct MulticlassLoss {
    pub id: String,
    pub n: usize,
    l: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    /// Jacobian of `l` when available in closed form (row i = d l_i / d q).
    jac: Option<Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>>,
    pub separable: bool,
}

impl std::fmt::Debug for MulticlassLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MulticlassLoss")
            .field("id", &self.id)
            .field("n", &self.n)
            .field("separable", &self.separable)
            .finish()
    }
}

impl MulticlassLoss {
    pub fn new(
        id: impl Into<String>,
        n: usize,
        l: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        separable: bool,
    ) -> Self {
        Self {
            id: id.into(),
            n,
            l: Arc::new(l),
            jac: None,
            separable,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// A separable loss l_i(q) = scalar(q_i).
    pub fn separable_from_scalar(id: impl Into<String>, scalar: ScalarFn, n: usize) -> Self {
        let s = scalar.clone();
        let sj = scalar;
        Self {
            id: id.into(),
            n,
            l: Arc::new(move |q: &[f64]| q.iter().map(|&qi| s.eval(qi)).collect()),
            jac: Some(Arc::new(move |q: &[f64]| {
                let n = q.len();
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    m[i][i] = sj.deriv(q[i]);
                }
                m
            })),
            separable: true,
        }
    }

    pub fn loss(&self, q: &[f64]) -> Vec<f64> {
        (self.l)(q)
    }

    /// Selection of the Bayes-risk potential's subdifferential: G = -l.
    pub fn g(&self, q: &[f64]) -> Vec<f64> {
        self.loss(q).into_iter().map(|v| -v).collect()
    }

    /// Jacobian of G (`dG_i/dq_k`); closed form when available, otherwise a
    /// central finite difference.
    pub fn g_jacobian(&self, q: &[f64]) -> Vec<Vec<f64>> {
        match &self.jac {
            Some(j) => j(q)
                .into_iter()
                .map(|row| row.into_iter().map(|v| -v).collect())
                .collect(),
            None => {
                let n = q.len();
                let h = 1e-6;
                let mut cols = Vec::with_capacity(n);
                let mut qq = q.to_vec();
                for k in 0..n {
                    let orig = qq[k];
                    qq[k] = orig + h;
                    let gp = self.g(&qq);
                    qq[k] = orig - h;
                    let gm = self.g(&qq);
                    qq[k] = orig;
                    cols.push(
                        gp.iter()
                            .zip(gm.iter())
                            .map(|(a, b)| (a - b) / (2.0 * h))
                            .collect::<Vec<f64>>(),
                    );
                }
                let mut m = vec![vec![0.0; n]; n];
                for (k, col) in cols.iter().enumerate() {
                    for i in 0..n {
                        m[i][k] = col[i];
                    }
                }
                m
            }
        }
    }

    pub fn has_closed_form_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Bayes-risk potential value phi(p) = -L(p,p).
    pub fn potential_value(&self, p: &ProbVector) -> f64 {
        -pointwise_risk(self, p, p).expect("matching dimensions")
    }
}

/// Expected loss p' l(q) with the 0 * infinity = 0 convention.
pub fn pointwise_risk(loss: &MulticlassLoss, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.dim() != loss.n || q.dim() != loss.n {
        return Err(Error::Dimension(format!(
            "loss dimension {} vs p {} / q {}",
            loss.n,
            p.dim(),
            q.dim()
        )));
    }
    let lq = loss.loss(q.entries());
    let mut acc = 0.0;
    for (pi, li) in p.entries().iter().zip(lq.iter()) {
        if *pi > 0.0 {
            acc += pi * li;
        }
    }
    Ok(acc)
}

/// Bayes risk L(p,p).
pub fn bayes_risk(loss: &MulticlassLoss, p: &ProbVector) -> Result<f64> {
    pointwise_risk(loss, p, p)
}

// ---------------------------------------------------------------------------
// Potentials, links, conjugates, Bregman divergences
// ---------------------------------------------------------------------------

/// A convex potential on an interval, with a fixed subgradient selection.
#[derive(Clone, Debug)]
pub struct ScalarPotential {
    pub phi: ScalarFn,
    /// Subgradient selection (the canonical link for Bayes-risk potentials).
    pub h: ScalarFn,
}

impl ScalarPotential {
    /// Certifies midpoint convexity and the subgradient inequality on a
    /// sampled grid, returning the witnessing triple/pair on failure.
    pub fn certify(&self, samples: usize) -> Result<()> {
        let (lo, hi) = self.phi.domain();
        let lo = lo.max(-1e6);
        let hi = hi.min(1e6);
        let step = (hi - lo) / (samples as f64 + 1.0);
        let pts: Vec<f64> = (1..=samples).map(|k| lo + step * k as f64).collect();
        for (a, u) in pts.iter().enumerate() {
            for v in pts.iter().skip(a + 1) {
                let mid = 0.5 * (u + v);
                let lhs = self.phi.eval(mid);
                let rhs = 0.5 * (self.phi.eval(*u) + self.phi.eval(*v));
                if lhs > rhs + 1e-10 {
                    return Err(Error::Contract(format!(
                        "midpoint convexity fails at ({u}, {v}): {lhs} > {rhs}"
                    )));
                }
            }
        }
        for t in &pts {
            for p in &pts {
                let gap = self.phi.eval(*t) - self.phi.eval(*p) - (t - p) * self.h.eval(*p);
                if gap < -1e-9 {
                    return Err(Error::Contract(format!(
                        "subgradient inequality fails at (t={t}, p={p}): gap {gap}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bregman divergence phi(u) - phi(v) - (u-v) h(v).
    pub fn bregman(&self, u: f64, v: f64) -> f64 {
        self.phi.eval(u) - self.phi.eval(v) - (u - v) * self.h.eval(v)
    }

    /// Convex conjugate phi*(z) = sup_t (t z - phi(t)).
    ///
    /// Uses subgradient inversion (phi*(z) = z H^{-1}(z) - phi(H^{-1}(z)))
    /// when z is in the range of the selection, otherwise a ternary-search
    /// supremum; boundary-attained suprema are flagged.
    pub fn conjugate(&self, z: f64) -> ConjugateValue {
        let (lo, hi) = self.phi.domain();
        let eps = 1e-12 * (hi - lo).max(1.0);
        let ilo = lo + eps;
        let ihi = hi - eps;
        let hlo = self.h.eval(ilo);
        let hhi = self.h.eval(ihi);
        if z > hlo && z < hhi {
            if let Ok(t) = crate::core_math::invert_monotone(&self.h, z, (ilo, ihi), 1e-13) {
                return ConjugateValue {
                    value: z * t - self.phi.eval(t),
                    argmax: t,
                    attained_interior: true,
                };
            }
        }
        // concave in t for convex phi: ternary search
        let obj = |t: f64| {
            let v = z * t - self.phi.eval(t);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let (mut a, mut b) = (ilo, ihi);
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if obj(m1) < obj(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        let t = 0.5 * (a + b);
        let mut best = (obj(t), t, true);
        for (cand, at_boundary) in [(lo, true), (hi, true)] {
            let v = obj(cand);
            if v > best.0 {
                best = (v, cand, !at_boundary);
            }
        }
        ConjugateValue {
            value: best.0,
            argmax: best.1,
            attained_interior: best.2 && (best.1 - lo).abs() > 2.0 * eps && (hi - best.1).abs() > 2.0 * eps,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConjugateValue {
    pub value: f64,
    pub argmax: f64,
    /// False when the supremum was only reached at the domain boundary.
    pub attained_interior: bool,
}

/// Potential from a binary loss: phi(p) = -L(p,p), with the canonical link
/// as subgradient selection. Midpoint convexity is certified on a grid.
pub fn potential_from_loss(loss: &BinaryLoss) -> Result<ScalarPotential> {
    let h = canonical_link(loss)?;
    let l0 = loss.l0.clone();
    let l1 = loss.l1.clone();
    let phi = ScalarFn::new(
        move |p: f64| {
            let mut acc = 0.0;
            if p > 0.0 {
                acc += p * l1.eval(p);
            }
            if p < 1.0 {
                acc += (1.0 - p) * l0.eval(p);
            }
            -acc
        },
        (0.0, 1.0),
        Monotonicity::Unknown,
    );
    let pot = ScalarPotential { phi, h };
    // convexity certification on a coarse interior grid; full certify() is
    // available to callers who want the quadratic-cost check
    let pts: Vec<f64> = (1..40).map(|k| k as f64 / 40.0).collect();
    for (a, u) in pts.iter().enumerate() {
        for v in pts.iter().skip(a + 1) {
            let mid = 0.5 * (u + v);
            let lhs = pot.phi.eval(mid);
            let rhs = 0.5 * (pot.phi.eval(*u) + pot.phi.eval(*v));
            if lhs > rhs + 1e-10 {
                return Err(Error::Improper(format!(
                    "{}: Bayes-risk potential not midpoint convex at ({u}, {v}, {mid})",
                    loss.id
                )));
            }
        }
    }
    Ok(pot)
}

/// Canonical link H(p) = l0(p) - l1(p), certified strictly increasing on a
/// fine interior grid.
pub fn canonical_link(loss: &BinaryLoss) -> Result<ScalarFn> {
    let l0 = loss.l0.clone();
    let l1 = loss.l1.clone();
    let f = move |p: f64| l0.eval(p) - l1.eval(p);
    let mut prev = f(1e-4);
    let mut p = 2e-4;
    while p < 1.0 - 1e-4 {
        let cur = f(p);
        if cur < prev - 1e-12 {
            return Err(Error::Improper(format!(
                "{}: canonical link not increasing at p = {p}",
                loss.id
            )));
        }
        prev = cur;
        p += 1e-4;
    }
    let mut link = ScalarFn::new(f, (0.0, 1.0), Monotonicity::Increasing);
    if loss.l0.has_closed_form_deriv() && loss.l1.has_closed_form_deriv() {
        let d0 = loss.l0.clone();
        let d1 = loss.l1.clone();
        link = link.with_deriv(move |p: f64| d0.deriv(p) - d1.deriv(p));
    }
    Ok(link)
}

// ---------------------------------------------------------------------------
// Vector potentials (Bregman regularizers over the simplex)
// ---------------------------------------------------------------------------

/// A convex potential over probability vectors with a subgradient selection G.
#[derive(Clone)]
pub struct VectorPotential {
    pub id: String,
    phi: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    g: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    g_jac: Option<Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>>,
}

impl std::fmt::Debug for VectorPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VectorPotential({})", self.id)
    }
}

impl VectorPotential {
    pub fn new(
        id: impl Into<String>,
        phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            phi: Arc::new(phi),
            g: Arc::new(g),
            g_jac: None,
        }
    }

    pub fn with_g_jacobian(
        mut self,
        j: impl Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.g_jac = Some(Arc::new(j));
        self
    }

    /// Negative Shannon entropy, the KL generator: phi = sum p log p,
    /// G = log p.
    pub fn neg_entropy() -> Self {
        Self::new(
            "neg_entropy",
            |p| p.iter().map(|&pi| if pi > 0.0 { pi * pi.ln() } else { 0.0 }).sum(),
            |p| p.iter().map(|&pi| pi.ln()).collect(),
        )
        .with_g_jacobian(|p| {
            let n = p.len();
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                m[i][i] = 1.0 / p[i];
            }
            m
        })
    }

    /// Itakura-Saito generator: phi = sum -log p, G = -1/p.
    pub fn itakura_saito() -> Self {
        Self::new(
            "itakura_saito",
            |p| p.iter().map(|&pi| -pi.ln()).sum(),
            |p| p.iter().map(|&pi| -1.0 / pi).collect(),
        )
        .with_g_jacobian(|p| {
            let n = p.len();
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                m[i][i] = 1.0 / (p[i] * p[i]);
            }
            m
        })
    }

    /// Squared Euclidean generator: phi = 1/2 ||p||^2, G = p.
    pub fn squared_euclidean() -> Self {
        Self::new(
            "squared_euclidean",
            |p| 0.5 * p.iter().map(|&pi| pi * pi).sum::<f64>(),
            |p| p.to_vec(),
        )
        .with_g_jacobian(|p| {
            let n = p.len();
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            m
        })
    }

    /// The Bayes-risk potential of a multiclass loss with selection G = -l.
    pub fn from_loss(loss: &MulticlassLoss) -> Self {
        let l1 = loss.clone();
        let l2 = loss.clone();
        let l3 = loss.clone();
        let mut v = Self::new(
            format!("bayes_risk:{}", loss.id),
            move |p| {
                let lv = l1.loss(p);
                -p.iter()
                    .zip(lv.iter())
                    .filter(|(pi, _)| **pi > 0.0)
                    .map(|(pi, li)| pi * li)
                    .sum::<f64>()
            },
            move |p| l2.g(p),
        );
        if loss.has_closed_form_jacobian() {
            v = v.with_g_jacobian(move |p| l3.g_jacobian(p));
        }
        v
    }

    pub fn phi(&self, p: &[f64]) -> f64 {
        (self.phi)(p)
    }

    pub fn g(&self, p: &[f64]) -> Vec<f64> {
        (self.g)(p)
    }

    pub fn g_jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match &self.g_jac {
            Some(j) => j(p),
            None => {
                let n = p.len();
                let h = 1e-6;
                let mut m = vec![vec![0.0; n]; n];
                let mut q = p.to_vec();
                for k in 0..n {
                    let orig = q[k];
                    q[k] = orig + h;
                    let gp = self.g(&q);
                    q[k] = orig - h;
                    let gm = self.g(&q);
                    q[k] = orig;
                    for i in 0..n {
                        m[i][k] = (gp[i] - gm[i]) / (2.0 * h);
                    }
                }
                m
            }
        }
    }

    /// Bregman divergence phi(u) - phi(v) - (u - v)' G(v).
    pub fn bregman(&self, u: &[f64], v: &[f64]) -> f64 {
        let gv = self.g(v);
        self.phi(u)
            - self.phi(v)
            - u.iter()
                .zip(v.iter())
                .zip(gv.iter())
                .map(|((ui, vi), gi)| (ui - vi) * gi)
                .sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Properness certification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StrictlyProper,
    Proper,
    Improper,
}

/// Outcome of a grid properness check; serializes for the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProperCertificate {
    pub loss_id: String,
    pub n: usize,
    pub resolution: usize,
    pub tol: f64,
    pub verdict: Verdict,
    /// (target p, prediction q) achieving the worst margin.
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
    /// min over grid pairs of L(p,q) - L(p,p); negative beyond tol means improper.
    pub margin: f64,
    /// Targets restricted to full-support grid points.
    pub interior_targets_only: bool,
}

impl ProperCertificate {
    pub fn passed(&self) -> bool {
        !matches!(self.verdict, Verdict::Improper)
    }
}

/// Grid certification of Def.-style properness: pass iff
/// `L(p,q) >= L(p,p) - tol` on all grid pairs. Strictness additionally
/// requires `L(p,q) > L(p,p) + STRICT_DELTA * ||p-q||^2` on interior
/// off-diagonal pairs.
pub fn check_proper(loss: &MulticlassLoss, resolution: usize, tol: f64) -> Result<ProperCertificate> {
    check_proper_with(loss, resolution, tol, false)
}

/// Properness over full-support (interior) targets only; predictions still
/// range over the whole grid.
pub fn check_proper_interior_targets(
    loss: &MulticlassLoss,
    resolution: usize,
    tol: f64,
) -> Result<ProperCertificate> {
    check_proper_with(loss, resolution, tol, true)
}

fn check_proper_with(
    loss: &MulticlassLoss,
    resolution: usize,
    tol: f64,
    interior_targets_only: bool,
) -> Result<ProperCertificate> {
    if resolution < 2 {
        return Err(Error::Domain("resolution must be >= 2".into()));
    }
    let grid = simplex_grid(loss.n, resolution)?;
    let losses: Vec<Vec<f64>> = grid.iter().map(|q| loss.loss(q.entries())).collect();
    let interior: Vec<bool> = grid.iter().map(|p| p.is_interior()).collect();

    // diagonal risks L(p,p)
    let diag: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, p)| expect_risk(p.entries(), &losses[i]))
        .collect();

    let n_targets = grid.len();
    let threads = crate::cert_threads().min(n_targets).max(1);
    let chunk = n_targets.div_ceil(threads);

    let scan = |lo: usize, hi: usize| -> PairScan {
        let mut best = PairScan::default();
        for pi in lo..hi.min(n_targets) {
            if interior_targets_only && !interior[pi] {
                continue;
            }
            let p = grid[pi].entries();
            if !diag[pi].is_finite() {
                continue;
            }
            for (qi, lq) in losses.iter().enumerate() {
                if qi == pi {
                    continue;
                }
                let lpq = expect_risk(p, lq);
                let m = lpq - diag[pi];
                if m.is_nan() {
                    continue;
                }
                if m < best.margin {
                    best.margin = m;
                    best.worst = Some((pi, qi));
                }
                if interior[pi] && interior[qi] {
                    let d2: f64 = p
                        .iter()
                        .zip(grid[qi].entries().iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if m <= STRICT_DELTA * d2 {
                        best.strict = false;
                        if best.strict_witness.is_none() {
                            best.strict_witness = Some((pi, qi));
                        }
                    }
                }
            }
        }
        best
    };

    let best = if threads == 1 {
        scan(0, n_targets)
    } else {
        let mut parts: Vec<PairScan> = Vec::with_capacity(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| s.spawn(move || scan(t * chunk, (t + 1) * chunk)))
                .collect();
            for h in handles {
                parts.push(h.join().expect("scan thread panicked"));
            }
        });
        // deterministic reduce: min margin, lexicographically smallest witness
        parts.into_iter().fold(PairScan::default(), PairScan::merge)
    };

    let verdict = if best.margin < -tol {
        Verdict::Improper
    } else if best.strict {
        Verdict::StrictlyProper
    } else {
        Verdict::Proper
    };
    let witness = match verdict {
        Verdict::Improper => best.worst,
        Verdict::Proper => best.strict_witness.or(best.worst),
        Verdict::StrictlyProper => best.worst,
    };
    Ok(ProperCertificate {
        loss_id: loss.id.clone(),
        n: loss.n,
        resolution,
        tol,
        verdict,
        worst_pair: witness.map(|(pi, qi)| {
            (grid[pi].entries().to_vec(), grid[qi].entries().to_vec())
        }),
        margin: best.margin,
        interior_targets_only,
    })
}

struct PairScan {
    margin: f64,
    worst: Option<(usize, usize)>,
    strict: bool,
    strict_witness: Option<(usize, usize)>,
}

impl Default for PairScan {
    fn default() -> Self {
        Self {
            margin: f64::INFINITY,
            worst: None,
            strict: true,
            strict_witness: None,
        }
    }
}

impl PairScan {
    fn merge(self, other: Self) -> Self {
        let (margin, worst) = if other.margin < self.margin
            || (other.margin == self.margin && other.worst < self.worst)
        {
            (other.margin, other.worst)
        } else {
            (self.margin, self.worst)
        };
        Self {
            margin,
            worst,
            strict: self.strict && other.strict,
            strict_witness: match (self.strict_witness, other.strict_witness) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

fn expect_risk(p: &[f64], lq: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (pi, li) in p.iter().zip(lq.iter()) {
        if *pi > 0.0 {
            acc += pi * li;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Choice-function condition
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct FConditionReport {
    pub pass: bool,
    /// F(z) + F(-z) = 1 everywhere on the sample (zero-abstention choice model).
    pub debreu: bool,
    pub witness: Option<(f64, f64)>,
}

/// Checks F(-z) + F(z) <= 1 on a symmetric sample of the domain.
pub fn check_f_condition(f: &ScalarFn, sample: &[f64]) -> FConditionReport {
    let mut debreu = true;
    for &z in sample {
        let s = f.eval(z) + f.eval(-z);
        if s > 1.0 + 1e-12 {
            return FConditionReport {
                pass: false,
                debreu: false,
                witness: Some((z, s)),
            };
        }
        if (s - 1.0).abs() > 1e-12 {
            debreu = false;
        }
    }
    FConditionReport {
        pass: true,
        debreu,
        witness: None,
    }
}

/// Default symmetric sample for F-condition checks.
pub fn f_condition_sample() -> Vec<f64> {
    let mut v: Vec<f64> = (0..=400).map(|k| -8.0 + 0.04 * k as f64).collect();
    v.push(0.0);
    v
}

// ---------------------------------------------------------------------------
// One-vs-rest lift, margins, separability
// ---------------------------------------------------------------------------

/// One-vs-rest lift of a proper binary loss to n classes:
/// `l_i(p) = l1(p_i) + sum_{j != i} l0(p_j)`, so the expected loss splits
/// into n per-coordinate binary risks and properness is inherited.
pub fn one_vs_rest_lift(loss: &BinaryLoss, n: usize) -> Result<MulticlassLoss> {
    if n < 2 {
        return Err(Error::Dimension("lift needs n >= 2".into()));
    }
    let cert = check_proper(&loss.to_multiclass(), 20, 1e-9)?;
    if !cert.passed() {
        return Err(Error::Improper(format!(
            "{}: input to one_vs_rest_lift is improper (margin {})",
            loss.id, cert.margin
        )));
    }
    let l0 = loss.l0.clone();
    let l1 = loss.l1.clone();
    let d0 = loss.l0.clone();
    let d1 = loss.l1.clone();
    Ok(MulticlassLoss {
        id: format!("ovr:{}", loss.id),
        n,
        l: Arc::new(move |q: &[f64]| {
            let sum0: f64 = q.iter().map(|&qj| l0.eval(qj)).sum();
            q.iter()
                .map(|&qi| l1.eval(qi) + sum0 - l0.eval(qi))
                .collect()
        }),
        jac: Some(Arc::new(move |q: &[f64]| {
            let n = q.len();
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for k in 0..n {
                    m[i][k] = if i == k { d1.deriv(q[k]) } else { d0.deriv(q[k]) };
                }
            }
            m
        })),
        separable: false,
    })
}

/// Result of the affine margin transform (a l0, a l1 + c).
#[derive(Clone, Debug)]
pub struct MarginTransformed {
    pub loss: BinaryLoss,
    /// Transformed link inverse: z -> H^{-1}((z + c) / a).
    pub link_inverse: ScalarFn,
    /// Transformed conjugate: z -> a phi*((z + c) / a).
    pub conjugate: ScalarFn,
    /// The margin gamma = c/a is non-negative, keeping the induced choice
    /// model inside the admissible family.
    pub klst_compliant: bool,
}

/// Affine margin / home-advantage transform of a proper binary loss.
pub fn margin_transform(loss: &BinaryLoss, a: f64, c: f64) -> Result<MarginTransformed> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("margin transform needs a > 0, got {a}")));
    }
    let base_pot = potential_from_loss(loss)?;
    let l0 = loss.l0.clone();
    let l1 = loss.l1.clone();
    let new_l0 = {
        let l0 = l0.clone();
        let mut f = ScalarFn::new(move |p| a * l0.eval(p), loss.l0.domain(), loss.l0.monotonicity());
        if loss.l0.has_closed_form_deriv() {
            let d = loss.l0.clone();
            f = f.with_deriv(move |p| a * d.deriv(p));
        }
        f
    };
    let new_l1 = {
        let l1 = l1.clone();
        let mut f = ScalarFn::new(move |p| a * l1.eval(p) + c, loss.l1.domain(), loss.l1.monotonicity());
        if loss.l1.has_closed_form_deriv() {
            let d = loss.l1.clone();
            f = f.with_deriv(move |p| a * d.deriv(p));
        }
        f
    };
    let h = base_pot.h.clone();
    let link_inverse = ScalarFn::new(
        move |z: f64| {
            crate::core_math::invert_monotone(&h, (z + c) / a, (1e-12, 1.0 - 1e-12), 1e-12)
                .unwrap_or_else(|_| if (z + c) / a > 0.0 { 1.0 } else { 0.0 })
        },
        (f64::NEG_INFINITY, f64::INFINITY),
        Monotonicity::Increasing,
    );
    let conj_pot = base_pot.clone();
    let conjugate = ScalarFn::new(
        move |z: f64| a * conj_pot.conjugate((z + c) / a).value,
        (f64::NEG_INFINITY, f64::INFINITY),
        Monotonicity::Unknown,
    );
    Ok(MarginTransformed {
        loss: BinaryLoss {
            id: format!("margin({},{}):{}", a, c, loss.id),
            l0: new_l0,
            l1: new_l1,
            symmetric: loss.symmetric && c == 0.0,
            strictly_proper_claimed: loss.strictly_proper_claimed,
            finite_endpoints: loss.finite_endpoints,
        },
        link_inverse,
        conjugate,
        klst_compliant: c / a >= 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparabilityReport {
    pub pass: bool,
    pub certificate: ProperCertificate,
    /// Least-squares fit of the scalar loss to -K1 log z + K2 via a
    /// two-point solve, with the max residual over an interior grid.
    pub k1: f64,
    pub k2: f64,
    pub fit_residual: f64,
}

/// Tests the only-log-is-separably-proper theorem at finite resolution:
/// a separable candidate `l_i(q) = scalar(q_i)` is checked for properness on
/// full-support targets (>= 3 nonzero coordinates), and the scalar is fitted
/// to -K1 log z + K2.
pub fn check_separability_implies_log(
    scalar: &ScalarFn,
    n: usize,
    resolution: usize,
    tol: f64,
) -> Result<SeparabilityReport> {
    if n < 3 {
        return Err(Error::Dimension("separability test needs n >= 3".into()));
    }
    let loss = MulticlassLoss::separable_from_scalar("separable_candidate", scalar.clone(), n);
    let certificate = check_proper_interior_targets(&loss, resolution, tol)?;
    let (z1, z2) = (0.25, 0.65);
    let k1 = -(scalar.eval(z1) - scalar.eval(z2)) / (z1.ln() - z2.ln());
    let k2 = scalar.eval(z1) + k1 * z1.ln();
    let mut fit_residual = 0.0f64;
    let mut z = 0.05;
    while z < 0.96 {
        fit_residual = fit_residual.max((scalar.eval(z) - (-k1 * z.ln() + k2)).abs());
        z += 0.05;
    }
    Ok(SeparabilityReport {
        pass: certificate.passed(),
        certificate,
        k1,
        k2,
        fit_residual,
    })
}
