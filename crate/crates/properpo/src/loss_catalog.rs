//! Catalog of closed-form loss families with their choice links and
//! surrogates.
//!
//! Each entry carries the binary partial-loss pair, a multiclass form, the
//! closed-form link inverse `F = H^{-1}` and surrogate `psi(z) = phi*(-z)`
//! when they exist, and properness flags for two and more than two classes:
//!
//! ```text
//!  id              l_i(p)                      F(z)                      psi(z)
//!  log             -log p_i                    1/(1+e^{-z})              log(1+e^{-z})
//!  binary_entropy  -log p_i - sum -log(1-p_j)  1/(1+e^{-z/2})            2 log(1+e^{-z/2})
//!  square (tau)    (1/tau)(1-p_i)^2            clamp((1+tau z)/2, 0, 1)  piecewise quadratic
//!  matsushita (mu) mu sqrt((1-p_i)/p_i)        (1+z/sqrt(z^2+mu^2))/2    (-z+sqrt(mu^2+z^2))/2
//!  alpha (beta)    (1-p_i^beta)/beta           numeric                   numeric
//! ```
//!
//! The Matsushita binary pair is stored at half the multiclass scale,
//! `l1(p) = (mu/2) sqrt((1-p)/p)`, which is the scaling whose canonical link
//! inverse and conjugate reduce to the closed forms above (the classical
//! mu = 1 potential is phi(p) = -sqrt(p(1-p))).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::core_math::{log1p_exp, sigmoid, Monotonicity, ScalarFn};
use crate::proper_loss::{
    canonical_link, one_vs_rest_lift, potential_from_loss, BinaryLoss, MulticlassLoss,
};
use crate::{Error, Result};

/// Parameter regime below which the alpha loss is evaluated as its log-loss
/// limit.
pub const ALPHA_SERIES_SWITCH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogId {
    Log,
    BinaryEntropy,
    Square,
    Matsushita,
    Alpha,
}

impl CatalogId {
    pub const ALL: [CatalogId; 5] = [
        CatalogId::Log,
        CatalogId::BinaryEntropy,
        CatalogId::Square,
        CatalogId::Matsushita,
        CatalogId::Alpha,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CatalogId::Log => "log",
            CatalogId::BinaryEntropy => "binary_entropy",
            CatalogId::Square => "square",
            CatalogId::Matsushita => "matsushita",
            CatalogId::Alpha => "alpha",
        }
    }
}

impl std::str::FromStr for CatalogId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(CatalogId::Log),
            "binary_entropy" => Ok(CatalogId::BinaryEntropy),
            "square" => Ok(CatalogId::Square),
            "matsushita" => Ok(CatalogId::Matsushita),
            "alpha" => Ok(CatalogId::Alpha),
            other => Err(Error::Domain(format!("unknown loss id: {other}"))),
        }
    }
}

impl std::fmt::Display for CatalogId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family parameters; fields not used by a family are ignored.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub tau: f64,
    pub mu: f64,
    pub beta: f64,
    /// Class count of the multiclass form.
    pub n: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            tau: 1.0,
            mu: 1.0,
            beta: 0.5,
            n: 3,
        }
    }
}

/// A fully populated catalog entry.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: CatalogId,
    pub params: Params,
    pub binary: BinaryLoss,
    pub multiclass: MulticlassLoss,
    /// Closed-form link inverse F = H^{-1}; None means numeric-only.
    pub f: Option<ScalarFn>,
    /// Closed-form surrogate psi(z) = phi*(-z); None means numeric-only.
    pub surrogate: Option<ScalarFn>,
    pub proper_n2: bool,
    pub proper_ngt2: bool,
    /// Breakpoints in z where the surrogate changes regime (square loss:
    /// the clipped-linear link saturates outside [-1/tau, 1/tau]).
    pub regime_breakpoints: Vec<f64>,
}

impl CatalogEntry {
    /// Link inverse derived numerically from the partial losses, for
    /// cross-checking the closed form.
    pub fn numeric_f(&self) -> Result<ScalarFn> {
        let h = canonical_link(&self.binary)?;
        Ok(ScalarFn::new(
            move |z: f64| {
                let lo = 1e-12;
                let hi = 1.0 - 1e-12;
                if z <= h.eval(lo) {
                    return 0.0;
                }
                if z >= h.eval(hi) {
                    return 1.0;
                }
                crate::core_math::invert_monotone(&h, z, (lo, hi), 1e-12).unwrap_or(f64::NAN)
            },
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        ))
    }

    /// Surrogate derived numerically as the conjugate of the Bayes-risk
    /// potential, for cross-checking the closed form.
    pub fn numeric_surrogate(&self) -> Result<ScalarFn> {
        let pot = potential_from_loss(&self.binary)?;
        Ok(ScalarFn::new(
            move |z: f64| pot.conjugate(-z).value,
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Decreasing,
        ))
    }

    pub fn summary(&self) -> CatalogSummary {
        let mut parameters = BTreeMap::new();
        match self.id {
            CatalogId::Square => {
                parameters.insert("tau".to_string(), self.params.tau);
            }
            CatalogId::Matsushita => {
                parameters.insert("mu".to_string(), self.params.mu);
            }
            CatalogId::Alpha => {
                parameters.insert("beta".to_string(), self.params.beta);
            }
            _ => {}
        }
        CatalogSummary {
            id: self.id,
            parameters,
            symmetric: self.binary.symmetric,
            proper_n2: self.proper_n2,
            proper_ngt2: self.proper_ngt2,
            closed_form_f: self.f.is_some(),
            closed_form_surrogate: self.surrogate.is_some(),
            regime_breakpoints: self.regime_breakpoints.clone(),
        }
    }
}

/// Serializable catalog listing row.
#[derive(Clone, Debug, Serialize)]
pub struct CatalogSummary {
    pub id: CatalogId,
    pub parameters: BTreeMap<String, f64>,
    pub symmetric: bool,
    pub proper_n2: bool,
    pub proper_ngt2: bool,
    pub closed_form_f: bool,
    pub closed_form_surrogate: bool,
    pub regime_breakpoints: Vec<f64>,
}

/// Builds a catalog entry, validating parameter ranges.
pub fn get(id: CatalogId, params: &Params) -> Result<CatalogEntry> {
    if params.n < 2 {
        return Err(Error::Dimension("catalog multiclass form needs n >= 2".into()));
    }
    match id {
        CatalogId::Log => Ok(log_entry(params)),
        CatalogId::BinaryEntropy => binary_entropy_entry(params),
        CatalogId::Square => {
            if !(params.tau > 0.0) {
                return Err(Error::Domain(format!("square loss needs tau > 0, got {}", params.tau)));
            }
            Ok(square_entry(params))
        }
        CatalogId::Matsushita => {
            if !(params.mu >= 0.0) {
                return Err(Error::Domain(format!(
                    "matsushita loss needs mu >= 0, got {}",
                    params.mu
                )));
            }
            Ok(matsushita_entry(params))
        }
        CatalogId::Alpha => {
            if !(params.beta >= 0.0) {
                return Err(Error::Domain(format!("alpha loss needs beta >= 0, got {}", params.beta)));
            }
            Ok(alpha_entry(params))
        }
    }
}

/// All five families at the given (default) parameters, deterministic order.
pub fn list(params: &Params) -> Result<Vec<CatalogSummary>> {
    CatalogId::ALL
        .iter()
        .map(|id| get(*id, params).map(|e| e.summary()))
        .collect()
}

fn log_binary() -> BinaryLoss {
    BinaryLoss {
        id: "log".into(),
        l0: ScalarFn::new(|p: f64| -(1.0 - p).ln(), (0.0, 1.0), Monotonicity::Increasing)
            .with_deriv(|p| 1.0 / (1.0 - p)),
        l1: ScalarFn::new(|p: f64| -p.ln(), (0.0, 1.0), Monotonicity::Decreasing)
            .with_deriv(|p| -1.0 / p),
        symmetric: true,
        strictly_proper_claimed: true,
        finite_endpoints: false,
    }
}

fn log_entry(params: &Params) -> CatalogEntry {
    let scalar = ScalarFn::new(|q: f64| -q.ln(), (0.0, 1.0), Monotonicity::Decreasing)
        .with_deriv(|q| -1.0 / q);
    CatalogEntry {
        id: CatalogId::Log,
        params: *params,
        binary: log_binary(),
        multiclass: MulticlassLoss::separable_from_scalar("log", scalar, params.n),
        f: Some(ScalarFn::sigmoid()),
        surrogate: Some(
            ScalarFn::new(
                |z: f64| log1p_exp(-z),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Decreasing,
            )
            .with_deriv(|z| -sigmoid(-z)),
        ),
        proper_n2: true,
        proper_ngt2: true,
        regime_breakpoints: vec![],
    }
}

fn binary_entropy_entry(params: &Params) -> Result<CatalogEntry> {
    let base = log_binary();
    let multiclass = one_vs_rest_lift(&base, params.n)?;
    // the n = 2 lift doubles the log loss
    let binary = BinaryLoss {
        id: "binary_entropy".into(),
        l0: ScalarFn::new(|p: f64| -2.0 * (1.0 - p).ln(), (0.0, 1.0), Monotonicity::Increasing)
            .with_deriv(|p| 2.0 / (1.0 - p)),
        l1: ScalarFn::new(|p: f64| -2.0 * p.ln(), (0.0, 1.0), Monotonicity::Decreasing)
            .with_deriv(|p| -2.0 / p),
        symmetric: true,
        strictly_proper_claimed: true,
        finite_endpoints: false,
    };
    Ok(CatalogEntry {
        id: CatalogId::BinaryEntropy,
        params: *params,
        binary,
        multiclass,
        f: Some(
            ScalarFn::new(
                |z: f64| sigmoid(z / 2.0),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Increasing,
            )
            .with_deriv(|z| {
                let s = sigmoid(z / 2.0);
                0.5 * s * (1.0 - s)
            }),
        ),
        surrogate: Some(
            ScalarFn::new(
                |z: f64| 2.0 * log1p_exp(-z / 2.0),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Decreasing,
            )
            .with_deriv(|z| -sigmoid(-z / 2.0)),
        ),
        proper_n2: true,
        proper_ngt2: true,
        regime_breakpoints: vec![],
    })
}

fn square_entry(params: &Params) -> CatalogEntry {
    let tau = params.tau;
    let scalar = ScalarFn::new(
        move |q: f64| (1.0 - q) * (1.0 - q) / tau,
        (0.0, 1.0),
        Monotonicity::Decreasing,
    )
    .with_deriv(move |q| -2.0 * (1.0 - q) / tau);
    let binary = BinaryLoss {
        id: format!("square(tau={tau})"),
        l0: ScalarFn::new(move |p: f64| p * p / tau, (0.0, 1.0), Monotonicity::Increasing)
            .with_deriv(move |p| 2.0 * p / tau),
        l1: scalar.clone(),
        symmetric: true,
        strictly_proper_claimed: true,
        finite_endpoints: true,
    };
    CatalogEntry {
        id: CatalogId::Square,
        params: *params,
        binary,
        multiclass: MulticlassLoss::separable_from_scalar(
            format!("square(tau={tau})"),
            scalar,
            params.n,
        ),
        f: Some(ScalarFn::new(
            move |z: f64| ((1.0 + tau * z) / 2.0).clamp(0.0, 1.0),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )),
        // the clipped-linear link makes the surrogate piecewise: linear
        // below -1/tau, quadratic on [-1/tau, 1/tau], zero above
        surrogate: Some(
            ScalarFn::new(
                move |z: f64| {
                    if z < -1.0 / tau {
                        -z
                    } else if z > 1.0 / tau {
                        0.0
                    } else {
                        let t = 1.0 - tau * z;
                        t * t / (4.0 * tau)
                    }
                },
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Decreasing,
            )
            .with_deriv(move |z| {
                if z < -1.0 / tau {
                    -1.0
                } else if z > 1.0 / tau {
                    0.0
                } else {
                    -(1.0 - tau * z) / 2.0
                }
            }),
        ),
        proper_n2: true,
        proper_ngt2: false,
        regime_breakpoints: vec![-1.0 / tau, 1.0 / tau],
    }
}

fn matsushita_entry(params: &Params) -> CatalogEntry {
    let mu = params.mu;
    let half = mu / 2.0;
    let binary = BinaryLoss {
        id: format!("matsushita(mu={mu})"),
        l0: ScalarFn::new(
            move |p: f64| half * (p / (1.0 - p)).sqrt(),
            (0.0, 1.0),
            Monotonicity::Increasing,
        )
        .with_deriv(move |p| half / (2.0 * (1.0 - p).powf(1.5) * p.sqrt())),
        l1: ScalarFn::new(
            move |p: f64| half * ((1.0 - p) / p).sqrt(),
            (0.0, 1.0),
            Monotonicity::Decreasing,
        )
        .with_deriv(move |p| -half / (2.0 * p.powf(1.5) * (1.0 - p).sqrt())),
        symmetric: true,
        strictly_proper_claimed: true,
        finite_endpoints: false,
    };
    let scalar = ScalarFn::new(
        move |q: f64| mu * ((1.0 - q) / q).sqrt(),
        (0.0, 1.0),
        Monotonicity::Decreasing,
    )
    .with_deriv(move |q| -mu / (2.0 * q.powf(1.5) * (1.0 - q).sqrt()));
    CatalogEntry {
        id: CatalogId::Matsushita,
        params: *params,
        binary,
        multiclass: MulticlassLoss::separable_from_scalar(
            format!("matsushita(mu={mu})"),
            scalar,
            params.n,
        ),
        f: Some(ScalarFn::new(
            move |z: f64| 0.5 * (1.0 + z / (z * z + mu * mu).sqrt()),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        )),
        surrogate: Some(
            ScalarFn::new(
                move |z: f64| 0.5 * (-z + (mu * mu + z * z).sqrt()),
                (f64::NEG_INFINITY, f64::INFINITY),
                Monotonicity::Decreasing,
            )
            .with_deriv(move |z| 0.5 * (-1.0 + z / (mu * mu + z * z).sqrt())),
        ),
        proper_n2: true,
        proper_ngt2: false,
        regime_breakpoints: vec![],
    }
}

/// Alpha-family scalar loss (1 - z^beta)/beta with the log-loss limit taken
/// by series switch for tiny beta.
pub fn alpha_scalar(beta: f64) -> ScalarFn {
    if beta < ALPHA_SERIES_SWITCH {
        ScalarFn::new(|z: f64| -z.ln(), (0.0, 1.0), Monotonicity::Decreasing)
            .with_deriv(|z| -1.0 / z)
    } else {
        ScalarFn::new(
            move |z: f64| (1.0 - z.powf(beta)) / beta,
            (0.0, 1.0),
            Monotonicity::Decreasing,
        )
        .with_deriv(move |z| -z.powf(beta - 1.0))
    }
}

fn alpha_entry(params: &Params) -> CatalogEntry {
    let beta = params.beta;
    let scalar = alpha_scalar(beta);
    let s0 = scalar.clone();
    let s1 = scalar.clone();
    let proper = beta < ALPHA_SERIES_SWITCH;
    let binary = BinaryLoss {
        id: format!("alpha(beta={beta})"),
        l0: ScalarFn::new(move |p: f64| s0.eval(1.0 - p), (0.0, 1.0), Monotonicity::Increasing)
            .with_deriv({
                let s = scalar.clone();
                move |p| -s.deriv(1.0 - p)
            }),
        l1: ScalarFn::new(move |p: f64| s1.eval(p), (0.0, 1.0), Monotonicity::Decreasing)
            .with_deriv({
                let s = scalar.clone();
                move |p| s.deriv(p)
            }),
        symmetric: true,
        strictly_proper_claimed: proper,
        finite_endpoints: beta >= ALPHA_SERIES_SWITCH,
    };
    CatalogEntry {
        id: CatalogId::Alpha,
        params: *params,
        binary,
        multiclass: MulticlassLoss::separable_from_scalar(
            format!("alpha(beta={beta})"),
            scalar,
            params.n,
        ),
        f: None,
        surrogate: None,
        proper_n2: proper,
        proper_ngt2: proper,
        regime_breakpoints: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proper_loss::{check_proper, Verdict};

    fn zgrid() -> Vec<f64> {
        (0..=200).map(|k| -5.0 + 0.05 * k as f64).collect()
    }

    #[test]
    fn closed_forms_match_numeric_link_and_conjugate() {
        let cases = [
            (CatalogId::Log, Params::default()),
            (CatalogId::BinaryEntropy, Params::default()),
            (CatalogId::Square, Params { tau: 0.5, ..Default::default() }),
            (CatalogId::Square, Params { tau: 2.0, ..Default::default() }),
            (CatalogId::Matsushita, Params { mu: 0.5, ..Default::default() }),
            (CatalogId::Matsushita, Params { mu: 1.0, ..Default::default() }),
        ];
        for (id, params) in cases {
            let e = get(id, &params).unwrap();
            let nf = e.numeric_f().unwrap();
            let ns = e.numeric_surrogate().unwrap();
            let cf = e.f.as_ref().unwrap();
            let cs = e.surrogate.as_ref().unwrap();
            for &z in &zgrid() {
                assert!(
                    (cf.eval(z) - nf.eval(z)).abs() < 1e-7,
                    "{id} F mismatch at z={z}: {} vs {}",
                    cf.eval(z),
                    nf.eval(z)
                );
                assert!(
                    (cs.eval(z) - ns.eval(z)).abs() < 1e-7,
                    "{id} psi mismatch at z={z}: {} vs {}",
                    cs.eval(z),
                    ns.eval(z)
                );
            }
        }
    }

    #[test]
    fn square_surrogate_piecewise_values() {
        for tau in [0.5, 1.0, 2.0] {
            let e = get(CatalogId::Square, &Params { tau, ..Default::default() }).unwrap();
            let s = e.surrogate.as_ref().unwrap();
            assert!((s.eval(0.0) - 1.0 / (4.0 * tau)).abs() < 1e-12);
            assert!(s.eval(2.0 / tau).abs() < 1e-12);
            assert!((s.eval(-2.0 / tau) - 2.0 / tau).abs() < 1e-12);
            assert_eq!(e.regime_breakpoints, vec![-1.0 / tau, 1.0 / tau]);
        }
    }

    #[test]
    fn matsushita_small_mu_limit_is_hinge() {
        let e = get(
            CatalogId::Matsushita,
            &Params { mu: 1e-8, ..Default::default() },
        )
        .unwrap();
        let s = e.surrogate.as_ref().unwrap();
        assert!(s.eval(1.0).abs() < 1e-7);
        assert!((s.eval(-1.0) - 1.0).abs() < 1e-7);
        assert!(s.eval(0.0).abs() < 1e-7);
    }

    #[test]
    fn alpha_series_switch_matches_log() {
        let tiny = get(CatalogId::Alpha, &Params { beta: 1e-9, ..Default::default() }).unwrap();
        for p in [0.1, 0.5, 0.9] {
            assert!((tiny.binary.l1.eval(p) - (-p.ln())).abs() < 1e-12);
        }
        // just above the switch the series is still close to log
        let small = get(CatalogId::Alpha, &Params { beta: 1e-5, ..Default::default() }).unwrap();
        for p in [0.1, 0.5, 0.9] {
            assert!((small.binary.l1.eval(p) - (-p.ln())).abs() < 1e-4);
        }
    }

    #[test]
    fn listing_is_deterministic_with_five_entries() {
        let l1 = list(&Params::default()).unwrap();
        let l2 = list(&Params::default()).unwrap();
        assert_eq!(l1.len(), 5);
        let ids1: Vec<_> = l1.iter().map(|s| s.id).collect();
        let ids2: Vec<_> = l2.iter().map(|s| s.id).collect();
        assert_eq!(ids1, ids2);
        assert_eq!(
            ids1,
            vec![
                CatalogId::Log,
                CatalogId::BinaryEntropy,
                CatalogId::Square,
                CatalogId::Matsushita,
                CatalogId::Alpha
            ]
        );
        let proper_multi: Vec<_> = l1.iter().filter(|s| s.proper_ngt2).map(|s| s.id).collect();
        assert_eq!(proper_multi, vec![CatalogId::Log, CatalogId::BinaryEntropy]);
        assert!(l1.iter().all(|s| s.symmetric));
    }

    #[test]
    fn parameter_range_errors() {
        assert!(get(CatalogId::Square, &Params { tau: 0.0, ..Default::default() }).is_err());
        assert!(get(CatalogId::Square, &Params { tau: -1.0, ..Default::default() }).is_err());
        assert!(get(CatalogId::Matsushita, &Params { mu: -0.1, ..Default::default() }).is_err());
        assert!(get(CatalogId::Alpha, &Params { beta: -0.5, ..Default::default() }).is_err());
    }

    #[test]
    fn surrogates_are_convex_nonincreasing_lipschitz() {
        for id in [CatalogId::Log, CatalogId::BinaryEntropy, CatalogId::Matsushita] {
            let e = get(id, &Params::default()).unwrap();
            let s = e.surrogate.as_ref().unwrap();
            let zs = zgrid();
            let mut max_slope = 0.0f64;
            for w in zs.windows(2) {
                let slope = (s.eval(w[1]) - s.eval(w[0])) / (w[1] - w[0]);
                assert!(slope <= 1e-9, "{id} surrogate not nonincreasing at {}", w[0]);
                max_slope = max_slope.max(slope.abs());
            }
            assert!(max_slope <= 1.0 + 1e-6, "{id} surrogate not 1-Lipschitz");
            for w in zs.windows(3) {
                let mid = s.eval(w[1]);
                assert!(mid <= 0.5 * (s.eval(w[0]) + s.eval(w[2])) + 1e-10);
            }
        }
    }

    #[test]
    fn properness_flags_rederivable_at_modest_resolution() {
        // the n=3 improprieties of square/matsushita need a grid fine
        // enough to land near the off-target minimizer; 20 matches the
        // acceptance suite, 12 suffices for the binary column
        for (id, params) in [
            (CatalogId::Log, Params::default()),
            (CatalogId::Square, Params::default()),
            (CatalogId::Matsushita, Params::default()),
            (CatalogId::Alpha, Params { beta: 1.0, ..Default::default() }),
        ] {
            let e = get(id, &params).unwrap();
            let c2 = check_proper(&e.binary.to_multiclass(), 12, 1e-9).unwrap();
            assert_eq!(c2.passed(), e.proper_n2, "{id} n=2 flag");
            let c3 = check_proper(&e.multiclass, 20, 1e-9).unwrap();
            assert_eq!(c3.passed(), e.proper_ngt2, "{id} n=3 flag");
            if matches!(c3.verdict, Verdict::Improper) {
                assert!(c3.worst_pair.is_some());
            }
        }
    }
}
