//! Loss factories: building proper losses from convex potentials and from
//! (surrogate, link) pairs.
//!
//! Two constructions are provided:
//!
//! - From an eligible potential phi with subgradient selection H:
//!
//!   ```text
//!   l1(p) = -phi(p) - (1-p) H(p)      l0(p) = -phi(p) + p H(p)
//!   ```
//!
//!   which is strictly proper for strictly convex phi, and symmetric when
//!   phi(p) = phi(1-p).
//!
//! - The composite constructor: given any strictly increasing l0 on (0,1),
//!
//!   ```text
//!   l1(p) = K - ( int_a^p l0(t)/t^2 dt + ((1-p)/p) l0(p) )
//!   ```
//!
//!   completes it to a strictly proper pair (so l1'(p) = -((1-p)/p) l0'(p)).
//!   Composing with an invertible choice function F gives losses realizing
//!   an arbitrary strictly increasing surrogate psi = l0 compose F; the only
//!   requirement on F is F(z) + F(-z) <= 1.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Deserialize;

use crate::core_math::{invert_monotone, log1p_exp, quad, sigmoid, Monotonicity, ScalarFn};
use crate::proper_loss::{
    check_f_condition, check_proper, f_condition_sample, BinaryLoss, Verdict,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Eligible potentials
// ---------------------------------------------------------------------------

/// A strictly convex potential on [0,1] with an invertible subgradient
/// selection, suitable for the potential-based loss factory.
#[derive(Clone, Debug)]
pub struct EligiblePotential {
    pub id: String,
    pub phi: ScalarFn,
    pub h: ScalarFn,
    pub h_inverse: ScalarFn,
    pub symmetric: bool,
    /// False when `h_inverse` is a certified numeric (bisection) inverse
    /// rather than a closed form.
    pub closed_form_inverse: bool,
}

impl EligiblePotential {
    /// Certifies eligibility: strict midpoint convexity, the centered-link
    /// sign condition H(1/2+d) + H(1/2-d) >= 0, and the inverse round trip
    /// H(H^{-1}(z)) = z within 1e-9.
    pub fn certify(&self) -> Result<()> {
        let pts: Vec<f64> = (1..80).map(|k| k as f64 / 80.0).collect();
        for (a, u) in pts.iter().enumerate() {
            for v in pts.iter().skip(a + 1) {
                let mid = 0.5 * (u + v);
                let gap = 0.5 * (self.phi.eval(*u) + self.phi.eval(*v)) - self.phi.eval(mid);
                let margin = 1e-9 * (v - u) * (v - u);
                if gap <= margin {
                    return Err(Error::Ineligible(format!(
                        "{}: not strictly convex at triple ({u}, {mid}, {v}); midpoint gap {gap}",
                        self.id
                    )));
                }
            }
        }
        let mut d = 0.01;
        while d < 0.5 {
            let s = self.h.eval(0.5 + d) + self.h.eval(0.5 - d);
            if s < -1e-12 {
                return Err(Error::Ineligible(format!(
                    "{}: H(1/2+d) + H(1/2-d) = {s} < 0 at d = {d}",
                    self.id
                )));
            }
            d += 0.01;
        }
        let zlo = self.h.eval(0.05);
        let zhi = self.h.eval(0.95);
        for k in 0..=20 {
            let z = zlo + (zhi - zlo) * k as f64 / 20.0;
            let back = self.h.eval(self.h_inverse.eval(z));
            if (back - z).abs() > 1e-9 {
                return Err(Error::Ineligible(format!(
                    "{}: H(H_inverse({z})) = {back}, round trip off by {}",
                    self.id,
                    (back - z).abs()
                )));
            }
        }
        Ok(())
    }

    /// Wraps phi and a closed-form H with a certified numeric inverse.
    pub fn with_numeric_inverse(
        id: impl Into<String>,
        phi: ScalarFn,
        h: ScalarFn,
        symmetric: bool,
    ) -> Self {
        let hh = h.clone();
        let h_inverse = ScalarFn::new(
            move |z: f64| {
                let lo = 1e-12;
                let hi = 1.0 - 1e-12;
                if z <= hh.eval(lo) {
                    return lo;
                }
                if z >= hh.eval(hi) {
                    return hi;
                }
                invert_monotone(&hh, z, (lo, hi), 1e-13).unwrap_or(f64::NAN)
            },
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        );
        Self {
            id: id.into(),
            phi,
            h,
            h_inverse,
            symmetric,
            closed_form_inverse: false,
        }
    }

    /// phi(p) = p log p + (1-p) log(1-p); H = logit, H^{-1} = sigmoid.
    pub fn neg_entropy() -> Self {
        Self {
            id: "neg_entropy".into(),
            phi: ScalarFn::new(
                |p: f64| {
                    let mut v = 0.0;
                    if p > 0.0 {
                        v += p * p.ln();
                    }
                    if p < 1.0 {
                        v += (1.0 - p) * (1.0 - p).ln();
                    }
                    v
                },
                (0.0, 1.0),
                Monotonicity::Unknown,
            ),
            h: ScalarFn::logit().with_deriv(|p| 1.0 / (p * (1.0 - p))),
            h_inverse: ScalarFn::sigmoid(),
            symmetric: true,
            closed_form_inverse: true,
        }
    }

    /// phi(p) = p^2 - p; H(p) = 2p - 1.
    pub fn square() -> Self {
        Self {
            id: "square".into(),
            phi: ScalarFn::new(|p: f64| p * p - p, (0.0, 1.0), Monotonicity::Unknown),
            h: ScalarFn::new(|p: f64| 2.0 * p - 1.0, (0.0, 1.0), Monotonicity::Increasing)
                .with_deriv(|_| 2.0),
            h_inverse: ScalarFn::new(
                |z: f64| ((z + 1.0) / 2.0).clamp(0.0, 1.0),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Increasing,
            ),
            symmetric: true,
            closed_form_inverse: true,
        }
    }

    /// phi(p) = -mu sqrt(p (1-p)); H^{-1}(z) = (1 + z/sqrt(z^2+mu^2))/2.
    pub fn matsushita(mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Domain(format!("matsushita potential needs mu > 0, got {mu}")));
        }
        Ok(Self {
            id: format!("matsushita(mu={mu})"),
            phi: ScalarFn::new(
                move |p: f64| -mu * (p * (1.0 - p)).sqrt(),
                (0.0, 1.0),
                Monotonicity::Unknown,
            ),
            h: ScalarFn::new(
                move |p: f64| mu * (p - 0.5) / (p * (1.0 - p)).sqrt(),
                (0.0, 1.0),
                Monotonicity::Increasing,
            )
            .with_deriv(move |p| mu / (4.0 * (p * (1.0 - p)).powf(1.5))),
            h_inverse: ScalarFn::new(
                move |z: f64| 0.5 * (1.0 + z / (z * z + mu * mu).sqrt()),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Increasing,
            ),
            symmetric: true,
            closed_form_inverse: true,
        })
    }

    /// phi(p) = exp(p), an asymmetric strictly convex potential;
    /// H^{-1}(z) = log z.
    pub fn exponential() -> Self {
        Self {
            id: "exp".into(),
            phi: ScalarFn::new(|p: f64| p.exp(), (0.0, 1.0), Monotonicity::Increasing),
            h: ScalarFn::new(|p: f64| p.exp(), (0.0, 1.0), Monotonicity::Increasing)
                .with_deriv(|p| p.exp()),
            h_inverse: ScalarFn::new(|z: f64| z.ln(), (0.0, f64::INFINITY), Monotonicity::Increasing),
            symmetric: false,
            closed_form_inverse: true,
        }
    }

    /// phi = (p^2 - p) + negative entropy, a symmetric mixture with a
    /// numeric link inverse.
    pub fn mixture() -> Self {
        let phi = ScalarFn::new(
            |p: f64| {
                let mut v = p * p - p;
                if p > 0.0 {
                    v += p * p.ln();
                }
                if p < 1.0 {
                    v += (1.0 - p) * (1.0 - p).ln();
                }
                v
            },
            (0.0, 1.0),
            Monotonicity::Unknown,
        );
        let h = ScalarFn::new(
            |p: f64| 2.0 * p - 1.0 + crate::core_math::logit(p),
            (0.0, 1.0),
            Monotonicity::Increasing,
        )
        .with_deriv(|p| 2.0 + 1.0 / (p * (1.0 - p)));
        Self::with_numeric_inverse("mixture", phi, h, true)
    }

    /// Named registry used by JSON factory specs and the acceptance suite.
    pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        match name {
            "neg_entropy" => Ok(Self::neg_entropy()),
            "square" => Ok(Self::square()),
            "matsushita" => Self::matsushita(params.get("mu").copied().unwrap_or(1.0)),
            "exp" => Ok(Self::exponential()),
            "mixture" => Ok(Self::mixture()),
            other => Err(Error::Domain(format!("unknown potential: {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// phi-PO factory
// ---------------------------------------------------------------------------

/// Builds the strictly proper pair induced by an eligible potential.
pub fn phi_po_build(pot: &EligiblePotential) -> Result<BinaryLoss> {
    pot.certify()?;
    let (phi0, h0) = (pot.phi.clone(), pot.h.clone());
    let (phi1, h1) = (pot.phi.clone(), pot.h.clone());
    let mut l0 = ScalarFn::new(
        move |p: f64| -phi0.eval(p) + p * h0.eval(p),
        (0.0, 1.0),
        Monotonicity::Increasing,
    );
    let mut l1 = ScalarFn::new(
        move |p: f64| -phi1.eval(p) - (1.0 - p) * h1.eval(p),
        (0.0, 1.0),
        Monotonicity::Decreasing,
    );
    if pot.h.has_closed_form_deriv() {
        let hd0 = pot.h.clone();
        let hd1 = pot.h.clone();
        l0 = l0.with_deriv(move |p| p * hd0.deriv(p));
        l1 = l1.with_deriv(move |p| -(1.0 - p) * hd1.deriv(p));
    }
    let loss = BinaryLoss {
        id: format!("phi_po:{}", pot.id),
        l0,
        l1,
        symmetric: pot.symmetric,
        strictly_proper_claimed: true,
        finite_endpoints: pot.phi.eval(0.0).is_finite()
            && pot.phi.eval(1.0).is_finite()
            && pot.h.eval(1e-9).is_finite()
            && pot.h.eval(1.0 - 1e-9).is_finite(),
    };
    let cert = check_proper(&loss.to_multiclass(), 20, 1e-9)?;
    if cert.verdict != Verdict::StrictlyProper {
        return Err(Error::Improper(format!(
            "{}: built loss failed strict properness (margin {})",
            loss.id, cert.margin
        )));
    }
    // finite-endpoint identity: l_v(p) = D_phi(v||p) - phi(v) for v in {0,1}
    if loss.finite_endpoints {
        for p in [0.1, 0.45, 0.8] {
            let d1 = pot.phi.eval(1.0) - pot.phi.eval(p) - (1.0 - p) * pot.h.eval(p);
            let d0 = pot.phi.eval(0.0) - pot.phi.eval(p) - (0.0 - p) * pot.h.eval(p);
            let e1 = (loss.l1.eval(p) - (d1 - pot.phi.eval(1.0))).abs();
            let e0 = (loss.l0.eval(p) - (d0 - pot.phi.eval(0.0))).abs();
            if e1 > 1e-9 || e0 > 1e-9 {
                return Err(Error::Contract(format!(
                    "{}: endpoint Bregman identity off by ({e0}, {e1}) at p = {p}",
                    loss.id
                )));
            }
        }
    }
    Ok(loss)
}

/// Symmetrized positive partial loss
/// `l1~(p) = ( -phi(p) - phi(1-p) - (1-p)(H(p) - H(1-p)) ) / 2`; together
/// with `l0~(p) = l1~(1-p)` it forms a symmetric proper pair. Only strict
/// convexity of phi is required: the symmetrized link
/// `(H(p) - H(1-p))/2` is centered by construction, so the sign condition
/// on H itself is not needed here.
pub fn phi_po_symmetrize(pot: &EligiblePotential) -> Result<ScalarFn> {
    // convexity-only certification (see note above)
    let pts: Vec<f64> = (1..80).map(|k| k as f64 / 80.0).collect();
    for w in pts.windows(3) {
        let gap = 0.5 * (pot.phi.eval(w[0]) + pot.phi.eval(w[2])) - pot.phi.eval(w[1]);
        if gap <= 0.0 {
            return Err(Error::Ineligible(format!(
                "{}: not strictly convex at ({}, {}, {})",
                pot.id, w[0], w[1], w[2]
            )));
        }
    }
    let phi = pot.phi.clone();
    let h = pot.h.clone();
    Ok(ScalarFn::new(
        move |p: f64| {
            0.5 * (-phi.eval(p) - phi.eval(1.0 - p) - (1.0 - p) * (h.eval(p) - h.eval(1.0 - p)))
        },
        (0.0, 1.0),
        Monotonicity::Decreasing,
    ))
}

/// The symmetric binary loss induced by `phi_po_symmetrize`.
pub fn phi_po_symmetrized_loss(pot: &EligiblePotential) -> Result<BinaryLoss> {
    let l1 = phi_po_symmetrize(pot)?;
    let l1c = l1.clone();
    let l0 = ScalarFn::new(
        move |p: f64| l1c.eval(1.0 - p),
        (0.0, 1.0),
        Monotonicity::Increasing,
    );
    Ok(BinaryLoss {
        id: format!("phi_po_sym:{}", pot.id),
        l0,
        l1,
        symmetric: true,
        strictly_proper_claimed: true,
        finite_endpoints: false,
    })
}

/// Scalar selection for twice-differentiable symmetric potentials:
/// `G(p) = phi(p) + (1-p) phi'(p) + p (1-p) phi''(p)`, identical across
/// coordinates.
pub fn phi_po_selection(pot: &EligiblePotential) -> Result<ScalarFn> {
    if !pot.h.has_closed_form_deriv() {
        return Err(Error::Ineligible(format!(
            "{}: selection formula needs a closed-form phi'' (H derivative)",
            pot.id
        )));
    }
    let phi = pot.phi.clone();
    let h = pot.h.clone();
    Ok(ScalarFn::new(
        move |p: f64| phi.eval(p) + (1.0 - p) * h.eval(p) + p * (1.0 - p) * h.deriv(p),
        (0.0, 1.0),
        Monotonicity::Unknown,
    ))
}

// ---------------------------------------------------------------------------
// Composite constructor
// ---------------------------------------------------------------------------

/// Completes a strictly increasing l0 on (0,1) to a strictly proper pair.
pub fn composite_build(ell0: &ScalarFn, k: f64, anchor: f64) -> Result<BinaryLoss> {
    if !(anchor > 0.0 && anchor < 1.0) {
        return Err(Error::Domain(format!("anchor must be in (0,1), got {anchor}")));
    }
    let mut prev = ell0.eval(1e-3);
    let mut p = 2e-3;
    while p < 1.0 - 1e-3 {
        let cur = ell0.eval(p);
        if !(cur > prev - 1e-14) || !cur.is_finite() {
            return Err(Error::Contract(format!(
                "composite input must be strictly increasing and finite on (0,1); fails at p = {p}"
            )));
        }
        prev = cur;
        p += 1e-3;
    }
    let e0 = ell0.clone();
    let e1 = ell0.clone();
    // The integral term diverges as p -> 0 (l1 -> +inf). Certification
    // grids and argmin searches revisit nearby points, so cache the signed
    // integral from the anchor and extend it from the nearest cached point
    // instead of re-integrating from the anchor each time. Keys are f64
    // bits, which order like the values for p in (0,1).
    let cache: Mutex<BTreeMap<u64, f64>> = Mutex::new(BTreeMap::new());
    let l1 = ScalarFn::new(
        move |p: f64| {
            if p <= 0.0 {
                return f64::INFINITY;
            }
            let p = p.min(1.0 - 1e-9);
            let integrand = |t: f64| e1.eval(t) / (t * t);
            let mut cache = cache.lock().unwrap();
            let integral = if let Some((&pb, &base)) = cache
                .range(..=p.to_bits())
                .next_back()
                .into_iter()
                .chain(cache.range(p.to_bits()..).next())
                .min_by(|a, b| {
                    let da = (f64::from_bits(*a.0) - p).abs();
                    let db = (f64::from_bits(*b.0) - p).abs();
                    da.partial_cmp(&db).unwrap()
                }) {
                let p0 = f64::from_bits(pb);
                if p0 == p {
                    base
                } else if p > p0 {
                    base + quad(&integrand, p0, p, 1e-10).unwrap_or(f64::NAN)
                } else {
                    base - quad(&integrand, p, p0, 1e-10).unwrap_or(f64::NAN)
                }
            } else if p >= anchor {
                quad(&integrand, anchor, p, 1e-10).unwrap_or(f64::NAN)
            } else {
                -quad(&integrand, p, anchor, 1e-10).unwrap_or(f64::NAN)
            };
            if integral.is_finite() {
                cache.insert(p.to_bits(), integral);
            }
            k - (integral + ((1.0 - p) / p) * e1.eval(p))
        },
        (0.0, 1.0),
        Monotonicity::Decreasing,
    );
    let l1 = if ell0.has_closed_form_deriv() {
        let d = ell0.clone();
        l1.with_deriv(move |p| -((1.0 - p) / p) * d.deriv(p))
    } else {
        l1
    };
    let loss = BinaryLoss {
        id: "composite".into(),
        l0: e0,
        l1,
        symmetric: false,
        strictly_proper_claimed: true,
        finite_endpoints: false,
    };
    let cert = check_proper(&loss.to_multiclass(), 25, 1e-7)?;
    if cert.verdict == Verdict::Improper {
        return Err(Error::Improper(format!(
            "composite output failed properness (margin {})",
            cert.margin
        )));
    }
    // the defining ODE l1'(p) = -((1-p)/p) l0'(p), by finite differences
    for p in [0.2, 0.5, 0.8] {
        let h = 1e-5;
        let lhs = (loss.l1.eval(p + h) - loss.l1.eval(p - h)) / (2.0 * h);
        let rhs = -((1.0 - p) / p) * (loss.l0.eval(p + h) - loss.l0.eval(p - h)) / (2.0 * h);
        if (lhs - rhs).abs() > 1e-4 * (1.0 + rhs.abs()) {
            return Err(Error::Contract(format!(
                "composite ODE check failed at p = {p}: {lhs} vs {rhs}"
            )));
        }
    }
    Ok(loss)
}

/// Builds the strictly proper loss realizing a strictly increasing surrogate
/// `psi` through a choice function `F`: `l0 = psi compose F^{-1}`, completed
/// by `composite_build`, so that `l0 compose F = psi`.
pub fn composite_decompose(psi: &ScalarFn, f: &ScalarFn) -> Result<BinaryLoss> {
    let sample: Vec<f64> = f_condition_sample()
        .into_iter()
        .filter(|z| f.contains(*z) && f.contains(-*z))
        .collect();
    let rep = check_f_condition(f, &sample);
    if !rep.pass {
        let (z, s) = rep.witness.unwrap_or((0.0, f64::NAN));
        return Err(Error::Ineligible(format!(
            "choice function violates F(-z) + F(z) <= 1: sum {s} at z = {z}; F(0) = {}",
            f.eval(0.0)
        )));
    }
    let mut prev = psi.eval(-8.0);
    for k in 1..=160 {
        let z = -8.0 + 0.1 * k as f64;
        let cur = psi.eval(z);
        if cur <= prev {
            return Err(Error::Contract(format!(
                "surrogate must be strictly increasing; fails at z = {z}"
            )));
        }
        prev = cur;
    }
    let psi_c = psi.clone();
    let f_c = f.clone();
    let ell0 = ScalarFn::new(
        move |p: f64| {
            let z = invert_monotone(&f_c, p, (-60.0, 60.0), 1e-12).unwrap_or(f64::NAN);
            psi_c.eval(z)
        },
        (0.0, 1.0),
        Monotonicity::Increasing,
    );
    let mut loss = composite_build(&ell0, 0.0, 0.5)?;
    loss.id = "composite_decompose".into();
    // reconstruction: l0 compose F = psi
    for k in 0..=20 {
        let z = -4.0 + 0.4 * k as f64;
        let got = loss.l0.eval(f.eval(z));
        if (got - psi.eval(z)).abs() > 1e-7 * (1.0 + psi.eval(z).abs()) {
            return Err(Error::Contract(format!(
                "surrogate reconstruction off at z = {z}: {got} vs {}",
                psi.eval(z)
            )));
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// JSON factory specs
// ---------------------------------------------------------------------------

/// Named-function descriptor in factory specs.
#[derive(Clone, Debug, Deserialize)]
pub struct FnDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// JSON factory spec: `{"kind": "phi_po"|"composite", ...}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorySpec {
    PhiPo {
        potential: FnDescriptor,
        #[serde(default)]
        symmetrize: bool,
    },
    Composite {
        #[serde(default)]
        ell0: Option<FnDescriptor>,
        #[serde(default)]
        psi: Option<FnDescriptor>,
        #[serde(default)]
        f: Option<FnDescriptor>,
        #[serde(default)]
        k: f64,
        #[serde(default = "default_anchor")]
        anchor: f64,
    },
}

fn default_anchor() -> f64 {
    0.5
}

/// Resolves a named scalar function for factory specs: increasing losses on
/// (0,1), surrogates on the line, and choice functions.
pub fn named_scalar(desc: &FnDescriptor) -> Result<ScalarFn> {
    let p = |k: &str, d: f64| desc.params.get(k).copied().unwrap_or(d);
    match desc.name.as_str() {
        "neg_log1m" => Ok(ScalarFn::new(
            |t: f64| -(1.0 - t).ln(),
            (0.0, 1.0),
            Monotonicity::Increasing,
        )
        .with_deriv(|t| 1.0 / (1.0 - t))),
        "identity" => Ok(ScalarFn::identity()),
        "power" => {
            let k = p("k", 2.0);
            Ok(ScalarFn::new(
                move |t: f64| t.powf(k),
                (0.0, 1.0),
                Monotonicity::Increasing,
            )
            .with_deriv(move |t| k * t.powf(k - 1.0)))
        }
        "softplus_inc" => Ok(ScalarFn::new(
            |z: f64| log1p_exp(z),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )
        .with_deriv(sigmoid)),
        "exp" => Ok(ScalarFn::new(
            |z: f64| z.exp(),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )
        .with_deriv(|z| z.exp())),
        "sin_affine" => Ok(ScalarFn::new(
            |z: f64| z + 0.4 * z.sin(),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )
        .with_deriv(|z| 1.0 + 0.4 * z.cos())),
        "sigmoid" => Ok(ScalarFn::sigmoid()),
        "sigmoid_half" => Ok(ScalarFn::new(
            |z: f64| sigmoid(z / 2.0),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )),
        "gumbel" => Ok(ScalarFn::new(
            |z: f64| 1.0 - (-z.exp()).exp(),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )),
        "clipped_linear" => {
            let tau = p("tau", 1.0);
            Ok(ScalarFn::new(
                move |z: f64| ((1.0 + tau * z) / 2.0).clamp(0.0, 1.0),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Increasing,
            ))
        }
        other => Err(Error::Domain(format!("unknown named function: {other}"))),
    }
}

/// Builds a loss from a parsed factory spec.
pub fn build_from_spec(spec: &FactorySpec) -> Result<BinaryLoss> {
    match spec {
        FactorySpec::PhiPo { potential, symmetrize } => {
            let pot = EligiblePotential::by_name(&potential.name, &potential.params)?;
            if *symmetrize {
                phi_po_symmetrized_loss(&pot)
            } else {
                phi_po_build(&pot)
            }
        }
        FactorySpec::Composite { ell0, psi, f, k, anchor } => match (ell0, psi, f) {
            (Some(e), None, None) => composite_build(&named_scalar(e)?, *k, *anchor),
            (None, Some(psi), Some(f)) => composite_decompose(&named_scalar(psi)?, &named_scalar(f)?),
            _ => Err(Error::Domain(
                "composite spec needs either ell0 or both psi and f".into(),
            )),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_math::logit;

    #[test]
    fn named_potentials_certify() {
        for pot in [
            EligiblePotential::neg_entropy(),
            EligiblePotential::square(),
            EligiblePotential::matsushita(1.0).unwrap(),
            EligiblePotential::exponential(),
            EligiblePotential::mixture(),
        ] {
            pot.certify().unwrap_or_else(|e| panic!("{}: {e}", pot.id));
        }
    }

    #[test]
    fn concave_candidate_rejected_with_witness() {
        let bad = EligiblePotential::with_numeric_inverse(
            "concave",
            ScalarFn::new(|p: f64| -(p * p), (0.0, 1.0), Monotonicity::Unknown),
            ScalarFn::new(|p: f64| -2.0 * p, (0.0, 1.0), Monotonicity::Decreasing),
            false,
        );
        match bad.certify() {
            Err(Error::Ineligible(msg)) => assert!(msg.contains("not strictly convex")),
            other => panic!("expected ineligibility, got {other:?}"),
        }
    }

    #[test]
    fn neg_entropy_recovers_log_loss() {
        let loss = phi_po_build(&EligiblePotential::neg_entropy()).unwrap();
        for p in [0.05, 0.3, 0.5, 0.92] {
            assert!((loss.l1.eval(p) - (-p.ln())).abs() < 1e-12);
            assert!((loss.l0.eval(p) - (-(1.0 - p).ln())).abs() < 1e-12);
        }
        assert!(loss.symmetric);
    }

    #[test]
    fn square_potential_recovers_square_loss() {
        let loss = phi_po_build(&EligiblePotential::square()).unwrap();
        for p in [0.1, 0.4, 0.85] {
            assert!((loss.l1.eval(p) - (1.0 - p) * (1.0 - p)).abs() < 1e-12);
            assert!((loss.l0.eval(p) - p * p).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_potential_builds_asymmetric_proper_loss() {
        let loss = phi_po_build(&EligiblePotential::exponential()).unwrap();
        assert!(!loss.symmetric);
        assert!(loss.symmetry_defect(0.01) > 1e-3);
    }

    #[test]
    fn symmetrize_fixes_symmetric_input() {
        let pot = EligiblePotential::neg_entropy();
        let built = phi_po_build(&pot).unwrap();
        let sym = phi_po_symmetrize(&pot).unwrap();
        for p in [0.1, 0.5, 0.8] {
            assert!((sym.eval(p) - built.l1.eval(p)).abs() < 1e-9);
        }
        assert!((sym.eval(0.5) - (-pot.phi.eval(0.5))).abs() < 1e-12);
    }

    #[test]
    fn symmetrize_handles_neg_log_potential() {
        // phi(p) = -log p is convex but violates the H sign condition; the
        // symmetrizer still must produce a symmetric proper pair
        let pot = EligiblePotential::with_numeric_inverse(
            "neg_log",
            ScalarFn::new(|p: f64| -p.ln(), (0.0, 1.0), Monotonicity::Decreasing),
            ScalarFn::new(|p: f64| -1.0 / p, (0.0, 1.0), Monotonicity::Increasing)
                .with_deriv(|p| 1.0 / (p * p)),
            false,
        );
        assert!(pot.certify().is_err());
        let loss = phi_po_symmetrized_loss(&pot).unwrap();
        assert!(loss.symmetry_defect(0.01) < 1e-9);
        let cert = check_proper(&loss.to_multiclass(), 20, 1e-9).unwrap();
        assert!(cert.passed(), "margin {}", cert.margin);
    }

    #[test]
    fn selection_formula_values() {
        let sq = phi_po_selection(&EligiblePotential::square()).unwrap();
        for p in [0.2, 0.5, 0.9] {
            let want = p * p - p + (1.0 - p) * (2.0 * p - 1.0) + 2.0 * p * (1.0 - p);
            assert!((sq.eval(p) - want).abs() < 1e-12);
        }
        let ne = phi_po_selection(&EligiblePotential::neg_entropy()).unwrap();
        for p in [0.25f64, 0.5, 0.7] {
            let want = p * p.ln()
                + (1.0 - p) * (1.0 - p).ln()
                + (1.0 - p) * logit(p)
                + p * (1.0 - p) / (p * (1.0 - p));
            assert!((ne.eval(p) - want).abs() < 1e-12);
        }
        // at p = 1/2 the phi' coefficient vanishes: G = phi(1/2) + phi''(1/2)/4
        let pot = EligiblePotential::square();
        let g_half = sq.eval(0.5);
        assert!((g_half - (pot.phi.eval(0.5) + 2.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn composite_neg_log1m_recovers_log_family() {
        let ell0 = named_scalar(&FnDescriptor {
            name: "neg_log1m".into(),
            params: BTreeMap::new(),
        })
        .unwrap();
        let loss = composite_build(&ell0, 0.0, 0.5).unwrap();
        // l1 = -log p + const: differences must match exactly
        let c = loss.l1.eval(0.5) - (-(0.5f64.ln()));
        for p in [0.1, 0.3, 0.7, 0.9] {
            assert!(
                (loss.l1.eval(p) - (-p.ln() + c)).abs() < 1e-8,
                "p={p}: {} vs {}",
                loss.l1.eval(p),
                -p.ln() + c
            );
        }
    }

    #[test]
    fn composite_identity_input() {
        let loss = composite_build(&ScalarFn::identity(), 0.0, 0.5).unwrap();
        // l1 = -log p + p + const
        let c = loss.l1.eval(0.5) - (-(0.5f64.ln()) + 0.5);
        for p in [0.15, 0.4, 0.8] {
            assert!((loss.l1.eval(p) - (-p.ln() + p + c)).abs() < 1e-8);
        }
    }

    #[test]
    fn composite_k_shift_preserves_verdict() {
        let a = composite_build(&ScalarFn::identity(), 0.0, 0.5).unwrap();
        let b = composite_build(&ScalarFn::identity(), 3.7, 0.5).unwrap();
        let ca = check_proper(&a.to_multiclass(), 15, 1e-7).unwrap();
        let cb = check_proper(&b.to_multiclass(), 15, 1e-7).unwrap();
        assert_eq!(ca.verdict, cb.verdict);
        assert!((b.l1.eval(0.4) - a.l1.eval(0.4) - 3.7).abs() < 1e-9);
    }

    #[test]
    fn decompose_dpo_pair_recovers_log_loss() {
        let psi = named_scalar(&FnDescriptor { name: "softplus_inc".into(), params: BTreeMap::new() })
            .unwrap();
        let loss = composite_decompose(&psi, &ScalarFn::sigmoid()).unwrap();
        for p in [0.1, 0.5, 0.9] {
            assert!((loss.l0.eval(p) - (-(1.0 - p).ln())).abs() < 1e-8);
        }
    }

    #[test]
    fn decompose_rejects_gumbel_link() {
        let psi =
            named_scalar(&FnDescriptor { name: "exp".into(), params: BTreeMap::new() }).unwrap();
        let gumbel =
            named_scalar(&FnDescriptor { name: "gumbel".into(), params: BTreeMap::new() }).unwrap();
        match composite_decompose(&psi, &gumbel) {
            Err(Error::Ineligible(msg)) => {
                let f0 = 1.0 - (-1.0f64).exp();
                assert!(msg.contains(&format!("F(0) = {f0}")), "message: {msg}");
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        // the same surrogate with the sigmoid link is fine
        composite_decompose(&psi, &ScalarFn::sigmoid()).unwrap();
    }

    #[test]
    fn decompose_accepts_nonconvex_monotone_surrogate() {
        let psi = named_scalar(&FnDescriptor { name: "sin_affine".into(), params: BTreeMap::new() })
            .unwrap();
        let loss = composite_decompose(&psi, &ScalarFn::sigmoid()).unwrap();
        let cert = check_proper(&loss.to_multiclass(), 20, 1e-7).unwrap();
        assert!(cert.passed());
    }

    #[test]
    fn factory_spec_json_round_trip() {
        let spec: FactorySpec = serde_json::from_str(
            r#"{"kind": "phi_po", "potential": {"name": "neg_entropy"}}"#,
        )
        .unwrap();
        let loss = build_from_spec(&spec).unwrap();
        assert!((loss.l1.eval(0.3) - (-0.3f64.ln())).abs() < 1e-12);

        let spec: FactorySpec = serde_json::from_str(
            r#"{"kind": "composite", "psi": {"name": "softplus_inc"}, "f": {"name": "sigmoid"}}"#,
        )
        .unwrap();
        build_from_spec(&spec).unwrap();

        let bad: FactorySpec = serde_json::from_str(r#"{"kind": "composite"}"#).unwrap();
        assert!(build_from_spec(&bad).is_err());
    }
}
