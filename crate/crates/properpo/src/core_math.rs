//! Shared numeric primitives: simplex geometry, adaptive quadrature,
//! monotone inversion and finite differences.
//!
//! Everything here is pure and immutable after construction; values can be
//! evaluated from any number of threads.

use std::sync::Arc;

use crate::{Error, Result};

/// Default tolerance for closed-form function comparisons.
pub const TOL_CLOSED_FORM: f64 = 1e-10;
/// Default tolerance for quadrature-backed function comparisons.
pub const TOL_QUADRATURE: f64 = 1e-7;

/// A point on the probability simplex. Entries are stored in full
/// (no implicit last coordinate).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    /// Validates non-negativity and normalization (sum within 1e-12 of 1).
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Dimension(format!(
                "simplex dimension must be >= 2, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|&e| !(e >= 0.0) || e > 1.0 + 1e-12) {
            return Err(Error::Domain("simplex entries must lie in [0,1]".into()));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "simplex entries must sum to 1, got {sum}"
            )));
        }
        Ok(Self { entries })
    }

    /// Normalizes a vector of non-negative weights into a `ProbVector`.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Domain("weights must be non-negative with positive sum".into()));
        }
        // renormalize exactly so new() cannot reject on rounding
        let mut v: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let s: f64 = v.iter().sum();
        let last = v.len() - 1;
        v[last] += 1.0 - s;
        Self::new(v)
    }

    pub fn uniform(n: usize) -> Self {
        Self::normalized(&vec![1.0; n]).expect("uniform weights are valid")
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// True when every coordinate is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.entries.iter().all(|&e| e > 0.0)
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Unknown,
}

/// A one-variable real function with a declared domain interval and
/// monotonicity flag, plus an optional closed-form derivative.
///
/// Houses links, potentials, conjugates and surrogates throughout the crate.
#[derive(Clone)]
pub struct ScalarFn {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    domain: (f64, f64),
    monotonicity: Monotonicity,
}

impl std::fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarFn")
            .field("domain", &self.domain)
            .field("monotonicity", &self.monotonicity)
            .field("has_deriv", &self.df.is_some())
            .finish()
    }
}

impl ScalarFn {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: (f64, f64),
        monotonicity: Monotonicity,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: None,
            domain,
            monotonicity,
        }
    }

    /// Attaches a closed-form derivative.
    pub fn with_deriv(mut self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.df = Some(Arc::new(df));
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Derivative: closed form when attached, otherwise a central difference
    /// with step scaled to the argument.
    pub fn deriv(&self, x: f64) -> f64 {
        match &self.df {
            Some(df) => df(x),
            None => {
                let h = 1e-6 * x.abs().max(1.0);
                // shrink toward the interior near domain endpoints
                let lo = self.domain.0;
                let hi = self.domain.1;
                let h = h.min((x - lo).max(1e-12) / 2.0).min((hi - x).max(1e-12) / 2.0);
                (self.eval(x + h) - self.eval(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn has_closed_form_deriv(&self) -> bool {
        self.df.is_some()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    pub fn identity() -> Self {
        Self::new(|x| x, (f64::NEG_INFINITY, f64::INFINITY), Monotonicity::Increasing)
            .with_deriv(|_| 1.0)
    }

    /// The logistic sigmoid on all of R.
    pub fn sigmoid() -> Self {
        Self::new(sigmoid, (f64::NEG_INFINITY, f64::INFINITY), Monotonicity::Increasing)
            .with_deriv(|z| {
                let s = sigmoid(z);
                s * (1.0 - s)
            })
    }

    /// log(p/(1-p)) on (0,1).
    pub fn logit() -> Self {
        Self::new(logit, (0.0, 1.0), Monotonicity::Increasing)
            .with_deriv(|p| 1.0 / (p * (1.0 - p)))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable log(1 + exp(z)).
pub fn log1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// All compositions of `r` into `n` parts scaled by 1/r: a cover of the
/// simplex with mesh 1/r. Cardinality is C(r+n-1, n-1).
pub fn simplex_grid(n: usize, r: usize) -> Result<Vec<ProbVector>> {
    if n < 2 {
        return Err(Error::Dimension("simplex_grid needs n >= 2".into()));
    }
    if r < 1 {
        return Err(Error::Dimension("simplex_grid needs r >= 1".into()));
    }
    let mut out = Vec::new();
    let mut counts = vec![0usize; n];
    fill_compositions(&mut out, &mut counts, 0, r, r);
    Ok(out)
}

fn fill_compositions(
    out: &mut Vec<ProbVector>,
    counts: &mut Vec<usize>,
    idx: usize,
    remaining: usize,
    r: usize,
) {
    if idx == counts.len() - 1 {
        counts[idx] = remaining;
        let entries: Vec<f64> = counts.iter().map(|&c| c as f64 / r as f64).collect();
        out.push(ProbVector::new(entries).expect("grid point is a valid distribution"));
        return;
    }
    for c in 0..=remaining {
        counts[idx] = c;
        fill_compositions(out, counts, idx + 1, remaining - c, r);
    }
}

/// Interior points of `simplex_grid` (all coordinates strictly positive).
pub fn simplex_grid_interior(n: usize, r: usize) -> Result<Vec<ProbVector>> {
    Ok(simplex_grid(n, r)?
        .into_iter()
        .filter(|p| p.is_interior())
        .collect())
}

const QUAD_MAX_DEPTH: u32 = 60;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Integrable endpoint singularities are handled by graded refinement toward
/// the singular endpoint. Accuracy degrades gracefully there: the reported
/// value is within a small multiple of `tol` for integrands like l(t)/t^2
/// with l bounded near the endpoint.
pub fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a < b) {
        if a == b {
            return Ok(0.0);
        }
        return Err(Error::Domain(format!("quad needs a < b, got [{a}, {b}]")));
    }
    let fa = f(a);
    let fb = f(b);
    // near-singular endpoints (finite but exploding) get the same graded
    // treatment as infinite ones; plain adaptive refinement stalls on them
    let fm = f(0.5 * (a + b));
    let spike = |v: f64| !v.is_finite() || v.abs() > 1e6 * (fm.abs() + 1.0);
    let singular_left = spike(fa);
    let singular_right = spike(fb);
    match (singular_left, singular_right) {
        (false, false) => adaptive_simpson(f, a, b, fa, fb, tol),
        (true, false) => telescope_left(f, a, b, fb, tol),
        (false, true) => {
            // mirror so the singularity sits at the left endpoint
            let g = |t: f64| f(a + b - t);
            telescope_left(&g, a, b, fa, tol)
        }
        (true, true) => {
            let mid = 0.5 * (a + b);
            let fm = f(mid);
            if !fm.is_finite() {
                return Err(Error::Quadrature("integrand not finite at interval midpoint".into()));
            }
            let left = {
                let g = |t: f64| f(a + mid - t);
                telescope_left(&g, a, mid, fm, tol / 2.0)?
            };
            let right = telescope_left(f, mid, b, f(b - (b - mid) * 1e-14), tol / 2.0);
            Ok(left + right?)
        }
    }
}

/// Geometric subdivision toward a singular left endpoint: integrate
/// [a + w/2^k, a + w/2^{k-1}] pieces until they stop contributing.
fn telescope_left(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fb: f64, tol: f64) -> Result<f64> {
    let w = b - a;
    let mut total = 0.0;
    let mut hi = b;
    let mut fhi = fb;
    for k in 1..=200u32 {
        let lo = a + w * 0.5f64.powi(k as i32);
        let flo = f(lo);
        if !flo.is_finite() {
            return Err(Error::Quadrature("integrand not finite inside interval".into()));
        }
        let piece = adaptive_simpson(f, lo, hi, flo, fhi, tol / 4.0)?;
        total += piece;
        if k > 8 && piece.abs() < tol / 4.0 {
            return Ok(total);
        }
        hi = lo;
        fhi = flo;
    }
    Err(Error::Quadrature("singularity refinement did not converge".into()))
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    tol: f64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let fm = f(m);
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::Quadrature("integrand not finite".into()));
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !(flm.is_finite() && frm.is_finite()) {
        return Err(Error::Quadrature("integrand not finite".into()));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a) < 1e-14 {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature("max subdivisions reached".into()));
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Ok(l + r)
}

/// Inverts a strictly monotone function by bisection on `bracket`.
///
/// Returns x with |f(x) - y| <= tol. Fails with `OutOfRange` when `y` lies
/// outside f(bracket) and with `Contract` when the bracket endpoints reveal
/// non-monotonicity against the declared flag.
pub fn invert_monotone(f: &ScalarFn, y: f64, bracket: (f64, f64), tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Domain("invert_monotone needs a non-empty bracket".into()));
    }
    let flo = f.eval(lo);
    let fhi = f.eval(hi);
    let increasing = match f.monotonicity() {
        Monotonicity::Increasing => true,
        Monotonicity::Decreasing => false,
        Monotonicity::Unknown => fhi > flo,
    };
    if (increasing && fhi < flo) || (!increasing && fhi > flo) {
        return Err(Error::Contract(
            "function values contradict the declared monotonicity".into(),
        ));
    }
    let (ylo, yhi) = if increasing { (flo, fhi) } else { (fhi, flo) };
    if y < ylo - tol || y > yhi + tol {
        return Err(Error::OutOfRange(format!(
            "y = {y} outside f(bracket) = [{ylo}, {yhi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f.eval(mid);
        if (fm - y).abs() <= tol {
            return Ok(mid);
        }
        if (fm < y) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // bracket exhausted to rounding; return the midpoint if it satisfies tol
    let mid = 0.5 * (lo + hi);
    if (f.eval(mid) - y).abs() <= tol * 10.0 {
        Ok(mid)
    } else {
        Err(Error::NonConvergence("bisection stalled before reaching tol".into()))
    }
}

/// Central-difference gradient, componentwise error O(h^2).
pub fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Stars-and-bars count C(r+n-1, n-1), the cardinality of `simplex_grid(n, r)`.
pub fn composition_count(n: usize, r: usize) -> u128 {
    let mut acc: u128 = 1;
    for k in 1..n {
        acc = acc * (r + k) as u128 / k as u128;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_2_2_enumerates_three_points() {
        let g = simplex_grid(2, 2).unwrap();
        let pts: Vec<Vec<f64>> = g.iter().map(|p| p.entries().to_vec()).collect();
        assert_eq!(pts.len(), 3);
        assert!(pts.contains(&vec![0.0, 1.0]));
        assert!(pts.contains(&vec![0.5, 0.5]));
        assert!(pts.contains(&vec![1.0, 0.0]));
    }

    #[test]
    fn grid_3_1_is_vertices() {
        let g = simplex_grid(3, 1).unwrap();
        assert_eq!(g.len(), 3);
        for p in &g {
            assert_eq!(p.entries().iter().filter(|&&e| e == 1.0).count(), 1);
        }
    }

    #[test]
    fn grid_3_4_has_stars_and_bars_count() {
        // independent oracle: C(4+3-1, 3-1) = C(6,2) = 15
        let g = simplex_grid(3, 4).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(composition_count(3, 4), 15);
        for p in &g {
            assert!((p.entries().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(p.entries().iter().all(|&e| e >= 0.0));
        }
    }

    #[test]
    fn grid_rejects_small_inputs() {
        assert!(simplex_grid(1, 4).is_err());
        assert!(simplex_grid(3, 0).is_err());
    }

    #[test]
    fn quad_constant() {
        let v = quad(&|_| 1.0, 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn quad_inverse_square() {
        // antiderivative -1/t: integral over [0.5, 1] = 2 - 1 = 1
        let v = quad(&|t| 1.0 / (t * t), 0.5, 1.0, 1e-10).unwrap();
        assert!((v - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn quad_log_over_square() {
        // symbolic antiderivative of -ln(t)/t^2 is (ln t + 1)/t
        let anti = |t: f64| (t.ln() + 1.0) / t;
        let expect = anti(1.0) - anti(0.2);
        let v = quad(&|t| -t.ln() / (t * t), 0.2, 1.0, 1e-8).unwrap();
        assert!((v - expect).abs() <= 1e-7, "got {v}, want {expect}");
    }

    #[test]
    fn quad_endpoint_singularity() {
        // 1/sqrt(t) on [0,1] = 2, singular but integrable at 0
        let v = quad(&|t| t.powf(-0.5), 0.0, 1.0, 1e-9).unwrap();
        assert!((v - 2.0).abs() <= 1e-6, "got {v}");
    }

    #[test]
    fn quad_additive_over_splits() {
        let f = |t: f64| (3.0 * t).sin() * t.exp();
        let tol = 1e-9;
        let whole = quad(&f, 0.0, 2.0, tol).unwrap();
        let parts = quad(&f, 0.0, 0.7, tol).unwrap() + quad(&f, 0.7, 2.0, tol).unwrap();
        assert!((whole - parts).abs() <= 2.0 * tol);
    }

    #[test]
    fn invert_identity() {
        let x = invert_monotone(&ScalarFn::identity(), 0.3, (0.0, 1.0), 1e-12).unwrap();
        assert!((x - 0.3).abs() <= 1e-11);
    }

    #[test]
    fn invert_logit_at_zero() {
        let x = invert_monotone(&ScalarFn::logit(), 0.0, (1e-9, 1.0 - 1e-9), 1e-12).unwrap();
        assert!((x - 0.5).abs() <= 1e-11);
    }

    #[test]
    fn invert_logit_matches_sigmoid() {
        let x = invert_monotone(&ScalarFn::logit(), 2.0, (1e-9, 1.0 - 1e-9), 1e-12).unwrap();
        assert!((x - sigmoid(2.0)).abs() <= 1e-10);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-12);
    }

    #[test]
    fn invert_rejects_out_of_range() {
        let err = invert_monotone(&ScalarFn::identity(), 2.0, (0.0, 1.0), 1e-12);
        assert!(matches!(err, Err(Error::OutOfRange(_))));
    }

    #[test]
    fn invert_detects_contract_violation() {
        let f = ScalarFn::new(|x| -x, (0.0, 1.0), Monotonicity::Increasing);
        assert!(matches!(
            invert_monotone(&f, 0.5, (0.0, 1.0), 1e-12),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn finite_diff_square() {
        let g = finite_diff(&|x: &[f64]| x[0] * x[0], &[1.0], 1e-5);
        assert!((g[0] - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn finite_diff_linear() {
        let c = [3.0, -1.5, 0.25];
        let f = move |x: &[f64]| x.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>();
        let g = finite_diff(&f, &[0.2, 0.4, 0.4], 1e-6);
        for (gi, ci) in g.iter().zip(c.iter()) {
            assert!((gi - ci).abs() <= 1e-9);
        }
    }

    #[test]
    fn prob_vector_rejects_bad_input() {
        assert!(ProbVector::new(vec![0.5]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
    }
}
