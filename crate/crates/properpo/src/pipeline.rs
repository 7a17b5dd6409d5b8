//! The generalized preference-optimization pipeline.
//!
//! Step (1): solve the Bregman-regularized policy problem
//!
//! ```text
//! max_pi  E_{y ~ pi}[r(x,y)] - D_{phi,G}(pi || pi_ref)
//! ```
//!
//! over the simplex; at interior optima the first-order condition makes
//! `r_i - (G_i(pi*) - G_i(pi_ref))` constant across i, so reward
//! *differences* are recoverable from the policies alone:
//!
//! ```text
//! r_i - r_j = G_i(pi*) - G_i(pi_ref) - G_j(pi*) + G_j(pi_ref)
//! ```
//!
//! Step (2) maps those differences through a choice function F into pairwise
//! probabilities, and step (3) scores observed preferences with a surrogate
//! applied to the same differences. Three recipes share this skeleton: a
//! proper-loss pair (the surrogate is the convex conjugate of the scoring
//! potential and F is the canonical link inverse), a potential-built loss,
//! and a free monotone surrogate. Margins enter as `z - gamma` and token
//! sequences can be replaced by generalized means of their factors before
//! the G terms are formed.

use serde::Deserialize;

use crate::constructors::{named_scalar, EligiblePotential, FnDescriptor};
use crate::core_math::{Monotonicity, ProbVector, ScalarFn};
use crate::loss_catalog::{self, CatalogId};
use crate::proper_loss::{
    one_vs_rest_lift, potential_from_loss, BinaryLoss, MulticlassLoss, VectorPotential,
};
use crate::{Error, Result};

pub const STEP1_MAX_ITERS: usize = 100_000;
pub const STEP1_KKT_TOL: f64 = 1e-6;
pub const STEP1_STEP_SIZE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Pmpo,
    Pppo,
    PhiPo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LengthNorm {
    #[default]
    None,
    KlGeometric,
    IsHarmonic,
}

/// A fully assembled recipe: scoring loss, surrogate, link, margin.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub recipe: Recipe,
    /// The multiclass scoring loss; its selection G = -l carries rewards.
    pub loss_b: MulticlassLoss,
    /// Surrogate in scoring orientation (nonincreasing): the per-pair term
    /// is surrogate(z - gamma) for the winner-minus-loser G difference z.
    pub surrogate: ScalarFn,
    /// Choice function for probability reporting; the link inverse for the
    /// proper-loss recipes, user-supplied (optional) for free surrogates.
    pub f: Option<ScalarFn>,
    /// Margin gamma = c/a from the affine transform (a l0, a l1 + c).
    pub gamma: f64,
    pub lennorm: LengthNorm,
}

impl Pipeline {
    /// Proper-loss recipe: the surrogate and link both derive from the
    /// binary loss. A supplied closed form is verified against the numeric
    /// conjugate within 1e-7 before being adopted.
    pub fn pppo(
        loss_b: MulticlassLoss,
        loss_a: &BinaryLoss,
        closed: Option<(ScalarFn, ScalarFn)>,
    ) -> Result<Self> {
        let pot = potential_from_loss(loss_a)?;
        let numeric = {
            let pot = pot.clone();
            ScalarFn::new(
                move |z: f64| pot.conjugate(-z).value,
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Decreasing,
            )
        };
        let (surrogate, f) = match closed {
            Some((psi, f)) => {
                for k in 0..=80 {
                    let z = -4.0 + 0.1 * k as f64;
                    let d = (psi.eval(z) - numeric.eval(z)).abs();
                    if d > 1e-7 {
                        return Err(Error::Contract(format!(
                            "closed-form surrogate disagrees with the conjugate by {d} at z = {z}"
                        )));
                    }
                }
                (psi, Some(f))
            }
            None => {
                let h = pot.h.clone();
                let link_inv = ScalarFn::new(
                    move |z: f64| {
                        let lo = 1e-12;
                        let hi = 1.0 - 1e-12;
                        if z <= h.eval(lo) {
                            return 0.0;
                        }
                        if z >= h.eval(hi) {
                            return 1.0;
                        }
                        crate::core_math::invert_monotone(&h, z, (lo, hi), 1e-12)
                            .unwrap_or(f64::NAN)
                    },
                    (f64::NEG_INFINITY, f64::INFINITY),
                    Monotonicity::Increasing,
                );
                (numeric, Some(link_inv))
            }
        };
        Ok(Self {
            recipe: Recipe::Pppo,
            loss_b,
            surrogate,
            f,
            gamma: 0.0,
            lennorm: LengthNorm::None,
        })
    }

    /// Free-surrogate recipe: psi strictly increasing in the reward-gap
    /// orientation; the stored scoring term is psi(-t).
    pub fn pmpo(loss_b: MulticlassLoss, psi: ScalarFn, f: Option<ScalarFn>) -> Result<Self> {
        let mut prev = psi.eval(-8.0);
        for k in 1..=160 {
            let z = -8.0 + 0.1 * k as f64;
            let cur = psi.eval(z);
            if cur <= prev {
                return Err(Error::Contract(format!(
                    "free surrogate must be strictly increasing; fails at z = {z}"
                )));
            }
            prev = cur;
        }
        let p = psi.clone();
        let mut surrogate = ScalarFn::new(
            move |t: f64| p.eval(-t),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Decreasing,
        );
        if psi.has_closed_form_deriv() {
            let p = psi.clone();
            surrogate = surrogate.with_deriv(move |t| -p.deriv(-t));
        }
        Ok(Self {
            recipe: Recipe::Pmpo,
            loss_b,
            surrogate,
            f,
            gamma: 0.0,
            lennorm: LengthNorm::None,
        })
    }

    /// Potential-built recipe: both losses come from one eligible potential.
    pub fn phi_po(pot: &EligiblePotential, n: usize) -> Result<Self> {
        let binary = crate::constructors::phi_po_build(pot)?;
        let loss_b = if n == 2 {
            binary.to_multiclass()
        } else {
            one_vs_rest_lift(&binary, n)?
        };
        let mut pipe = Self::pppo(loss_b, &binary, None)?;
        pipe.recipe = Recipe::PhiPo;
        pipe.f = Some(pot.h_inverse.clone());
        Ok(pipe)
    }

    /// Applies the margin transform (a l0, a l1 + c); only gamma = c/a >= 0
    /// keeps the induced choice model admissible, recorded by the flag.
    pub fn with_margin(mut self, a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::Domain(format!("margin needs a > 0, got {a}")));
        }
        self.gamma = c / a;
        Ok(self)
    }

    pub fn margin_klst_compliant(&self) -> bool {
        self.gamma >= 0.0
    }

    pub fn with_lennorm(mut self, mode: LengthNorm) -> Self {
        self.lennorm = mode;
        self
    }

    pub fn n(&self) -> usize {
        self.loss_b.n
    }
}

// ---------------------------------------------------------------------------
// Step (1): regularized solve and reward recovery
// ---------------------------------------------------------------------------

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = sorted[0] - 1.0;
    for (k, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn kkt_residual(r: &[f64], pi: &[f64], g_pi: &[f64], g_ref: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..pi.len() {
        if pi[i] > 1e-9 {
            let s = r[i] - (g_pi[i] - g_ref[i]);
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    hi - lo
}

/// Maximizes `r . pi - D_{phi,G}(pi || pi_ref)` over the simplex by projected
/// gradient ascent with backtracking; stops when the first-order spread is
/// below 1e-6. The negative-entropy case uses the softmax closed form and
/// cross-checks its residual.
pub fn solve_step1(r: &[f64], pi_ref: &ProbVector, pot: &VectorPotential) -> Result<ProbVector> {
    let n = pi_ref.dim();
    if r.len() != n {
        return Err(Error::Dimension(format!("reward has {} entries, policy {n}", r.len())));
    }
    if !pi_ref.is_interior() {
        return Err(Error::Domain("reference policy must be interior".into()));
    }
    let refv = pi_ref.entries();
    let g_ref = pot.g(refv);
    if pot.id == "neg_entropy" {
        // pi* proportional to pi_ref exp(r)
        let zmax = (0..n).map(|i| refv[i].ln() + r[i]).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = (0..n).map(|i| (refv[i].ln() + r[i] - zmax).exp()).collect();
        let s: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|wi| wi / s).collect();
        let res = kkt_residual(r, &pi, &pot.g(&pi), &g_ref);
        if res > STEP1_KKT_TOL {
            return Err(Error::Contract(format!(
                "softmax closed form failed its own first-order check: residual {res}"
            )));
        }
        return ProbVector::new(pi);
    }

    let objective = |pi: &[f64]| -> f64 {
        let reward: f64 = pi.iter().zip(r.iter()).map(|(p, ri)| p * ri).sum();
        reward - pot.bregman(pi, refv)
    };
    let mut pi = refv.to_vec();
    let mut j = objective(&pi);
    for _ in 0..STEP1_MAX_ITERS {
        let g_pi = pot.g(&pi);
        if kkt_residual(r, &pi, &g_pi, &g_ref) <= STEP1_KKT_TOL {
            return ProbVector::new(pi);
        }
        let grad: Vec<f64> = (0..n).map(|i| r[i] - (g_pi[i] - g_ref[i])).collect();
        let mut step = STEP1_STEP_SIZE;
        let mut advanced = false;
        while step > 1e-14 {
            let cand: Vec<f64> = (0..n).map(|i| pi[i] + step * grad[i]).collect();
            let cand = project_simplex(&cand);
            let jc = objective(&cand);
            if jc.is_finite() && jc > j {
                pi = cand;
                j = jc;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            // no ascent direction at line-search resolution; accept if the
            // residual is already tight, otherwise report
            let g_pi = pot.g(&pi);
            let res = kkt_residual(r, &pi, &g_pi, &g_ref);
            if res <= STEP1_KKT_TOL * 10.0 {
                return ProbVector::new(pi);
            }
            return Err(Error::NonConvergence(format!(
                "line search stalled with first-order residual {res}"
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "no first-order point within {STEP1_MAX_ITERS} iterations"
    )))
}

/// Reward-difference matrix `M_ij = (G_i(pi*) - G_i(ref)) - (G_j(pi*) -
/// G_j(ref))`; equals `r_i - r_j` for interior step-(1) solutions. Boundary
/// policies are rejected: their multipliers are unobservable from pi alone.
pub fn recover_reward_diffs(
    pi_star: &ProbVector,
    pi_ref: &ProbVector,
    pot: &VectorPotential,
) -> Result<Vec<Vec<f64>>> {
    let n = pi_star.dim();
    if pi_ref.dim() != n {
        return Err(Error::Dimension("policy dimensions differ".into()));
    }
    if pi_star.entries().iter().any(|&p| p <= 1e-9) {
        return Err(Error::Domain(
            "boundary policy: reward differences are not recoverable".into(),
        ));
    }
    let d: Vec<f64> = pot
        .g(pi_star.entries())
        .iter()
        .zip(pot.g(pi_ref.entries()).iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok((0..n)
        .map(|i| (0..n).map(|j| d[i] - d[j]).collect())
        .collect())
}

// ---------------------------------------------------------------------------
// Steps (2) and (3)
// ---------------------------------------------------------------------------

/// The G-difference z = G_i(pi) - G_i(ref) - G_j(pi) + G_j(ref).
pub fn g_difference(
    loss_b: &MulticlassLoss,
    pi: &ProbVector,
    pi_ref: &ProbVector,
    i: usize,
    j: usize,
) -> f64 {
    let g = loss_b.g(pi.entries());
    let gr = loss_b.g(pi_ref.entries());
    g[i] - gr[i] - g[j] + gr[j]
}

/// Modeled probability of i beating j: F applied to the G-difference,
/// clamped into [0,1].
pub fn choice_prob(
    pipe: &Pipeline,
    pi: &ProbVector,
    pi_ref: &ProbVector,
    i: usize,
    j: usize,
) -> Result<f64> {
    let f = pipe
        .f
        .as_ref()
        .ok_or_else(|| Error::Domain("this recipe carries no choice function".into()))?;
    let z = g_difference(&pipe.loss_b, pi, pi_ref, i, j);
    Ok(f.eval(z).clamp(0.0, 1.0))
}

/// One preference observation: in state `x`, action `winner` beat `loser`.
#[derive(Clone, Copy, Debug, Deserialize)]
pub struct Triple {
    pub x: usize,
    pub winner: usize,
    pub loser: usize,
}

/// Pairwise summation for reproducible means independent of chunking.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Mean surrogate over the dataset: `surrogate(z - gamma)` per triple, with
/// z the winner-minus-loser G-difference.
pub fn objective(
    pipe: &Pipeline,
    pi: &[ProbVector],
    pi_ref: &[ProbVector],
    dataset: &[Triple],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("empty preference dataset".into()));
    }
    let mut terms = Vec::with_capacity(dataset.len());
    for (idx, t) in dataset.iter().enumerate() {
        if t.x >= pi.len() || t.winner >= pipe.n() || t.loser >= pipe.n() {
            return Err(Error::OutOfRange(format!("triple {idx} references unknown indices")));
        }
        let z = g_difference(&pipe.loss_b, &pi[t.x], &pi_ref[t.x], t.winner, t.loser);
        let v = pipe.surrogate.eval(z - pipe.gamma);
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite loss term at triple {idx}")));
        }
        terms.push(v);
    }
    Ok(pairwise_sum(&terms) / dataset.len() as f64)
}

/// Expected objective: every ordered pair weighted by its ground-truth
/// preference probability; removes sampling noise for tolerance-tight tests.
pub fn expected_objective(
    pipe: &Pipeline,
    pi: &[ProbVector],
    pi_ref: &[ProbVector],
    pref_probs: &[Vec<Vec<f64>>],
) -> Result<f64> {
    let n = pipe.n();
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for (x, px) in pref_probs.iter().enumerate() {
        for w in 0..n {
            for l in 0..n {
                if w == l || px[w][l] == 0.0 {
                    continue;
                }
                let z = g_difference(&pipe.loss_b, &pi[x], &pi_ref[x], w, l);
                terms.push(px[w][l] * pipe.surrogate.eval(z - pipe.gamma));
                weights.push(px[w][l]);
            }
        }
    }
    let wsum = pairwise_sum(&weights);
    if wsum <= 0.0 {
        return Err(Error::Domain("no preference mass in expected objective".into()));
    }
    Ok(pairwise_sum(&terms) / wsum)
}

// ---------------------------------------------------------------------------
// Length normalization
// ---------------------------------------------------------------------------

/// Result of length normalization; `alpha` is the exponential tilt solved in
/// harmonic mode.
#[derive(Clone, Copy, Debug)]
pub struct LengthNormalized {
    pub value: f64,
    pub alpha: Option<f64>,
}

/// Replaces a token-factor sequence by the generalized mean matching the
/// regularizer: the geometric mean for the KL case and the harmonic mean for
/// the Itakura-Saito case (with its tilt alpha from
/// `(1/n) sum_l prod_{k != l} pi_k = exp(-alpha n)`).
/// `LengthNorm::None` returns the plain product.
pub fn length_normalize(factors: &[f64], mode: LengthNorm) -> Result<LengthNormalized> {
    if factors.is_empty() {
        return Err(Error::Dimension("empty factor list".into()));
    }
    if factors.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        if mode == LengthNorm::IsHarmonic && factors.iter().any(|&p| p == 0.0) {
            return Err(Error::Domain("zero token factor in harmonic mode".into()));
        }
        return Err(Error::Domain("token factors must lie in (0, 1]".into()));
    }
    let n = factors.len() as f64;
    match mode {
        LengthNorm::None => Ok(LengthNormalized {
            value: factors.iter().product(),
            alpha: None,
        }),
        LengthNorm::KlGeometric => {
            // all-equal lists short-circuit to the exact fixed point
            if factors.windows(2).all(|w| w[0] == w[1]) {
                return Ok(LengthNormalized {
                    value: factors[0],
                    alpha: None,
                });
            }
            Ok(LengthNormalized {
                value: (factors.iter().map(|p| p.ln()).sum::<f64>() / n).exp(),
                alpha: None,
            })
        }
        LengthNorm::IsHarmonic => {
            // all-equal lists short-circuit to the exact fixed point
            if factors.windows(2).all(|w| w[0] == w[1]) {
                return Ok(LengthNormalized {
                    value: factors[0],
                    alpha: Some((1.0 / factors[0]).ln()),
                });
            }
            let harmonic = n / factors.iter().map(|p| 1.0 / p).sum::<f64>();
            // tilt from the leave-one-out mean gamma = (1/n) sum_l prod_{k != l} pi_k,
            // reported per leave-one-out factor (gamma = exp(-alpha (n-1))) so
            // that the all-equal list pi_k = v gives alpha = ln(1/v) exactly;
            // the harmonic mean is then product * exp(alpha (n-1)).
            let product: f64 = factors.iter().product();
            let loo_mean = factors.iter().map(|p| product / p).sum::<f64>() / n;
            let alpha = if factors.len() > 1 {
                -loo_mean.ln() / (n - 1.0)
            } else {
                0.0
            };
            Ok(LengthNormalized {
                value: harmonic,
                alpha: Some(alpha),
            })
        }
    }
}

/// Brute-force minimizer of `sum_k D_phi(v || pi_k)` over
/// [min factor, max factor]; the independent oracle for the generalized-mean
/// claim. `phi` must be convex on a domain covering (0, 1].
pub fn oracle_length_solution(factors: &[f64], phi: &ScalarFn) -> Result<f64> {
    if factors.is_empty() {
        return Err(Error::Dimension("empty factor list".into()));
    }
    let lo = factors.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = factors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(lo);
    }
    let total = |v: f64| -> f64 {
        factors
            .iter()
            .map(|&p| phi.eval(v) - phi.eval(p) - (v - p) * phi.deriv(p))
            .sum()
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if total(m1) > total(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    Ok(0.5 * (a + b))
}

/// 1-D negative entropy t log t, the KL normalizer component.
pub fn scalar_neg_entropy() -> ScalarFn {
    ScalarFn::new(
        |t: f64| if t > 0.0 { t * t.ln() } else { 0.0 },
        (0.0, f64::INFINITY),
        Monotonicity::Unknown,
    )
    .with_deriv(|t| t.ln() + 1.0)
}

/// 1-D Burg entropy -log t, the Itakura-Saito normalizer component.
pub fn scalar_burg() -> ScalarFn {
    ScalarFn::new(|t: f64| -t.ln(), (0.0, f64::INFINITY), Monotonicity::Decreasing)
        .with_deriv(|t| -1.0 / t)
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

/// Serialized pipeline recipe accepted by the CLI and trainer.
#[derive(Clone, Debug, Deserialize)]
pub struct PipelineConfig {
    pub recipe: String,
    /// Catalog id for the scoring loss (and, for the proper-loss recipe,
    /// the surrogate-side loss). Defaults to "log".
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Potential descriptor for the phi_po recipe.
    #[serde(default)]
    pub potential: Option<FnDescriptor>,
    /// Increasing surrogate descriptor for the pmpo recipe.
    #[serde(default)]
    pub psi: Option<FnDescriptor>,
    /// Margin pair (a, c).
    #[serde(default)]
    pub margin: Option<(f64, f64)>,
    /// "none" | "kl_geometric" | "is_harmonic".
    #[serde(default)]
    pub length_normalization: Option<String>,
}

impl PipelineConfig {
    fn catalog_params(&self, n: usize) -> loss_catalog::Params {
        let mut p = loss_catalog::Params { n, ..Default::default() };
        if let Some(tau) = self.tau {
            p.tau = tau;
        }
        if let Some(mu) = self.mu {
            p.mu = mu;
        }
        if let Some(beta) = self.beta {
            p.beta = beta;
        }
        p
    }

    pub fn build(&self, n: usize) -> Result<Pipeline> {
        let lennorm = match self.length_normalization.as_deref() {
            None | Some("none") => LengthNorm::None,
            Some("kl_geometric") => LengthNorm::KlGeometric,
            Some("is_harmonic") => LengthNorm::IsHarmonic,
            Some(other) => {
                return Err(Error::Domain(format!("unknown length normalization: {other}")))
            }
        };
        let mut pipe = match self.recipe.as_str() {
            "pppo" => {
                let id: CatalogId = self.loss.as_deref().unwrap_or("log").parse()?;
                let entry = loss_catalog::get(id, &self.catalog_params(n))?;
                let closed = match (&entry.f, &entry.surrogate) {
                    (Some(f), Some(s)) => Some((s.clone(), f.clone())),
                    _ => None,
                };
                Pipeline::pppo(entry.multiclass.clone(), &entry.binary, closed)?
            }
            "pmpo" => {
                let id: CatalogId = self.loss.as_deref().unwrap_or("log").parse()?;
                let entry = loss_catalog::get(id, &self.catalog_params(n))?;
                let psi_desc = self
                    .psi
                    .clone()
                    .ok_or_else(|| Error::Domain("pmpo recipe needs a psi descriptor".into()))?;
                Pipeline::pmpo(entry.multiclass.clone(), named_scalar(&psi_desc)?, None)?
            }
            "phi_po" => {
                let desc = self.potential.clone().ok_or_else(|| {
                    Error::Domain("phi_po recipe needs a potential descriptor".into())
                })?;
                let pot = EligiblePotential::by_name(&desc.name, &desc.params)?;
                Pipeline::phi_po(&pot, n)?
            }
            other => return Err(Error::Domain(format!("unknown recipe: {other}"))),
        };
        if let Some((a, c)) = self.margin {
            pipe = pipe.with_margin(a, c)?;
        }
        Ok(pipe.with_lennorm(lennorm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_math::{log1p_exp, sigmoid};

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn dpo_pipeline(n: usize) -> Pipeline {
        let cfg = PipelineConfig {
            recipe: "pppo".into(),
            loss: Some("log".into()),
            tau: None,
            mu: None,
            beta: None,
            potential: None,
            psi: None,
            margin: None,
            length_normalization: None,
        };
        cfg.build(n).unwrap()
    }

    #[test]
    fn step1_constant_reward_returns_reference() {
        let r = [0.7, 0.7, 0.7];
        let pi_ref = pv(&[0.5, 0.3, 0.2]);
        for pot in [
            VectorPotential::neg_entropy(),
            VectorPotential::itakura_saito(),
            VectorPotential::squared_euclidean(),
        ] {
            let pi = solve_step1(&r, &pi_ref, &pot).unwrap();
            for (a, b) in pi.entries().iter().zip(pi_ref.entries()) {
                assert!((a - b).abs() < 1e-6, "{}: {a} vs {b}", pot.id);
            }
        }
    }

    #[test]
    fn step1_kl_closed_form_two_actions() {
        let pi = solve_step1(&[1.0, 0.0], &pv(&[0.5, 0.5]), &VectorPotential::neg_entropy())
            .unwrap();
        let e = std::f64::consts::E;
        assert!((pi.get(0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((pi.get(1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn step1_itakura_saito_first_order_residual() {
        let r = [0.4, -0.1, 0.2];
        let pi_ref = pv(&[0.4, 0.35, 0.25]);
        let pot = VectorPotential::itakura_saito();
        let pi = solve_step1(&r, &pi_ref, &pot).unwrap();
        let res = kkt_residual(r.as_slice(), pi.entries(), &pot.g(pi.entries()), &pot.g(pi_ref.entries()));
        assert!(res <= STEP1_KKT_TOL * 10.0, "residual {res}");
    }

    #[test]
    fn recovery_round_trip_all_potentials() {
        // rewards small enough that even the squared-Euclidean solution
        // stays interior (its simplex projection zeroes coordinates for
        // large spreads, after which differences are not recoverable)
        let r = [0.2, 0.05, -0.1];
        let pi_ref = pv(&[0.3, 0.45, 0.25]);
        for pot in [
            VectorPotential::neg_entropy(),
            VectorPotential::itakura_saito(),
            VectorPotential::squared_euclidean(),
        ] {
            let pi = solve_step1(&r, &pi_ref, &pot).unwrap();
            let m = recover_reward_diffs(&pi, &pi_ref, &pot).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (m[i][j] - (r[i] - r[j])).abs() < 1e-5,
                        "{}: ({i},{j}) {} vs {}",
                        pot.id,
                        m[i][j],
                        r[i] - r[j]
                    );
                    assert!((m[i][j] + m[j][i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn recovery_zero_at_reference_and_boundary_rejected() {
        let pi_ref = pv(&[0.6, 0.4]);
        let m = recover_reward_diffs(&pi_ref, &pi_ref, &VectorPotential::neg_entropy()).unwrap();
        assert!(m.iter().flatten().all(|&v| v.abs() < 1e-14));
        let boundary = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert!(recover_reward_diffs(&boundary, &pi_ref, &VectorPotential::neg_entropy()).is_err());
    }

    #[test]
    fn dpo_choice_prob_is_sigmoid_of_log_ratios() {
        let pipe = dpo_pipeline(3);
        let pi = pv(&[0.5, 0.3, 0.2]);
        let pi_ref = pv(&[0.2, 0.5, 0.3]);
        let want = sigmoid(
            (pi.get(0) / pi_ref.get(0)).ln() - (pi.get(1) / pi_ref.get(1)).ln(),
        );
        let got = choice_prob(&pipe, &pi, &pi_ref, 0, 1).unwrap();
        assert!((got - want).abs() < 1e-12);
        // at the reference the symmetric link gives 1/2
        let half = choice_prob(&pipe, &pi_ref, &pi_ref, 0, 2).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dpo_objective_matches_logistic_form() {
        let pipe = dpo_pipeline(3);
        let pi = vec![pv(&[0.5, 0.3, 0.2]), pv(&[0.25, 0.35, 0.4])];
        let pi_ref = vec![pv(&[0.3, 0.4, 0.3]), pv(&[0.4, 0.3, 0.3])];
        let data = vec![
            Triple { x: 0, winner: 0, loser: 1 },
            Triple { x: 1, winner: 2, loser: 0 },
            Triple { x: 0, winner: 2, loser: 1 },
        ];
        let got = objective(&pipe, &pi, &pi_ref, &data).unwrap();
        let want: f64 = data
            .iter()
            .map(|t| {
                let z = (pi[t.x].get(t.winner) / pi_ref[t.x].get(t.winner)).ln()
                    - (pi[t.x].get(t.loser) / pi_ref[t.x].get(t.loser)).ln();
                log1p_exp(-z)
            })
            .sum::<f64>()
            / 3.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn margin_raises_loss_at_reference() {
        let pipe = dpo_pipeline(2).with_margin(1.0, 0.8).unwrap();
        let pi_ref = vec![pv(&[0.5, 0.5])];
        let data = vec![Triple { x: 0, winner: 0, loser: 1 }];
        let with = objective(&pipe, &pi_ref, &pi_ref, &data).unwrap();
        let without = objective(&dpo_pipeline(2), &pi_ref, &pi_ref, &data).unwrap();
        assert!(with >= without);
        assert!((without - 2.0f64.ln()).abs() < 1e-12);
        assert!(pipe.margin_klst_compliant());
    }

    #[test]
    fn length_normalization_closed_forms() {
        let geo = length_normalize(&[0.5, 0.2], LengthNorm::KlGeometric).unwrap();
        assert!((geo.value - 0.1f64.sqrt()).abs() < 1e-12);
        let har = length_normalize(&[0.5, 0.2], LengthNorm::IsHarmonic).unwrap();
        assert!((har.value - 2.0 / 7.0).abs() < 1e-12);
        let none = length_normalize(&[0.5, 0.2], LengthNorm::None).unwrap();
        assert!((none.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn all_equal_factors_fixed_point_with_alpha() {
        let v = 0.37;
        for mode in [LengthNorm::KlGeometric, LengthNorm::IsHarmonic] {
            let out = length_normalize(&[v; 5], mode).unwrap();
            assert!((out.value - v).abs() < 1e-12);
            if let Some(alpha) = out.alpha {
                assert!((alpha - (1.0 / v).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_agrees_with_generalized_means() {
        let factors = [0.5, 0.2, 0.8];
        let geo = length_normalize(&factors, LengthNorm::KlGeometric).unwrap().value;
        let got = oracle_length_solution(&factors, &scalar_neg_entropy()).unwrap();
        assert!((got - geo).abs() < 1e-6);
        let har = length_normalize(&factors, LengthNorm::IsHarmonic).unwrap().value;
        let got = oracle_length_solution(&factors, &scalar_burg()).unwrap();
        assert!((got - har).abs() < 1e-6);
        assert!((oracle_length_solution(&[0.3], &scalar_burg()).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pipeline_config_variants_build() {
        let cfg: PipelineConfig = serde_json::from_str(
            r#"{"recipe": "pmpo", "psi": {"name": "sin_affine"}}"#,
        )
        .unwrap();
        let pipe = cfg.build(3).unwrap();
        assert_eq!(pipe.recipe, Recipe::Pmpo);

        let cfg: PipelineConfig = serde_json::from_str(
            r#"{"recipe": "phi_po", "potential": {"name": "square"},
                "margin": [2.0, 1.0], "length_normalization": "kl_geometric"}"#,
        )
        .unwrap();
        let pipe = cfg.build(2).unwrap();
        assert_eq!(pipe.recipe, Recipe::PhiPo);
        assert!((pipe.gamma - 0.5).abs() < 1e-15);
        assert_eq!(pipe.lennorm, LengthNorm::KlGeometric);

        let bad: PipelineConfig =
            serde_json::from_str(r#"{"recipe": "pppo", "loss": "nope"}"#).unwrap();
        assert!(bad.build(2).is_err());
    }
}
