//! Finite verification of the lottery-based choice axioms and fitting of the
//! Fechnerian representation.
//!
//! A choice table stores pairwise probabilities p(y > y' | x) with abstention
//! allowed: p(y > y') + p(y' > y) <= 1, with equality ("zero abstention")
//! defining the edges of a graph per state. Preference is p >= 1/2, ties
//! counting both ways. Tables expand to lotteries (y1 y2)_alpha by bilinear
//! mixing:
//!
//! ```text
//! p((y1 y2)_a > (y3 y4)_a) = a^2 p13 + a(1-a) p14 + a(1-a) p23 + (1-a)^2 p24
//! ```
//!
//! The axioms checked on the expanded space:
//!
//! - Bearability: p(L > L) = 1/2 for every lottery L.
//! - ZA and P imply ZA: a wedge with same-polarity preferences from its
//!   center is a triangle.
//! - P implies ZA and P: every preference is connected by a directed path of
//!   preferred zero-abstention steps.
//! - Monotonicity (one alpha suffices): for any 6-tuple with a triangle
//!   (L1,L2,L3), a wedge (L4,L5,L6), p(L1>L2) >= p(L4>L5) and
//!   p(L2>L3) >= p(L5>L6), the pair (L4,L6) is an edge and
//!   p(L1>L3) >= p(L4>L6).
//!
//! A table passing all axioms admits a representation p = F(u - u') with F
//! strictly increasing and F(z) + F(-z) <= 1; `fit_representation` recovers
//! (u, F) numerically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core_math::{logit, ScalarFn};
use crate::proper_loss::{check_f_condition, f_condition_sample};
use crate::{Error, Result};

/// Comparison tolerance for synthetic exact tables.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default alpha sample approximating "for all alpha in (0,1)".
pub const LCS_ALPHA_SAMPLE: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Default alpha for the monotonicity check (one alpha suffices).
pub const DEFAULT_ALPHA_MONO: f64 = 0.5;

/// Exhaustive monotonicity is used up to this many lotteries.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// probs[x][y][y'] = p(y > y' | x).
pub type Tensor = Vec<Vec<Vec<f64>>>;

/// Pairwise choice probabilities over states and actions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChoiceTable {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub probs: Tensor,
}

impl ChoiceTable {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Checks shape, [0,1] entries, and nonnegative abstention mass.
    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.n_states(), self.n_actions());
        if self.probs.len() != m {
            return Err(Error::Dimension(format!(
                "probs has {} states, expected {m}",
                self.probs.len()
            )));
        }
        for (x, px) in self.probs.iter().enumerate() {
            if px.len() != n || px.iter().any(|row| row.len() != n) {
                return Err(Error::Dimension(format!("state {x}: probs must be {n}x{n}")));
            }
            for (y, row) in px.iter().enumerate() {
                for (yp, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Domain(format!(
                            "p({y} > {yp} | {x}) = {p} outside [0,1]"
                        )));
                    }
                    if p + px[yp][y] > 1.0 + 1e-12 {
                        return Err(Error::Domain(format!(
                            "pair ({y}, {yp}) in state {x} has sum {} > 1",
                            p + px[yp][y]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: ChoiceTable = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// The lottery expansion of a choice table at a fixed alpha. Lottery
/// (y1 y2)_alpha has index y1 * n + y2.
#[derive(Clone, Debug)]
pub struct LotterySpace {
    pub alpha: f64,
    pub n_base: usize,
    pub probs: Tensor,
}

impl LotterySpace {
    pub fn lottery_index(&self, y1: usize, y2: usize) -> usize {
        y1 * self.n_base + y2
    }

    pub fn n_lotteries(&self) -> usize {
        self.n_base * self.n_base
    }
}

/// Bilinear lottery expansion; alpha must be strictly inside (0,1).
pub fn expand(table: &ChoiceTable, alpha: f64) -> Result<LotterySpace> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha = {alpha} excluded: extreme mixtures reduce lotteries to plain actions"
        )));
    }
    table.validate()?;
    let n = table.n_actions();
    let nl = n * n;
    let a = alpha;
    let probs = table
        .probs
        .iter()
        .map(|px| {
            let mut e = vec![vec![0.0; nl]; nl];
            for y1 in 0..n {
                for y2 in 0..n {
                    for y3 in 0..n {
                        for y4 in 0..n {
                            e[y1 * n + y2][y3 * n + y4] = a * a * px[y1][y3]
                                + a * (1.0 - a) * px[y1][y4]
                                + a * (1.0 - a) * px[y2][y3]
                                + (1.0 - a) * (1.0 - a) * px[y2][y4];
                        }
                    }
                }
            }
            e
        })
        .collect();
    Ok(LotterySpace { alpha, n_base: n, probs })
}

fn is_edge(t: &Tensor, x: usize, a: usize, b: usize, tol: f64) -> bool {
    t[x][a][b] + t[x][b][a] >= 1.0 - tol
}

fn prefers(t: &Tensor, x: usize, a: usize, b: usize, tol: f64) -> bool {
    t[x][a][b] >= 0.5 - tol
}

/// A per-axiom verdict with the lexicographically first witness on failure.
#[derive(Clone, Debug, Serialize)]
pub struct AxiomVerdict {
    pub pass: bool,
    pub witness: Option<AxiomWitness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomWitness {
    pub state: usize,
    pub lotteries: Vec<usize>,
    pub detail: String,
}

impl AxiomVerdict {
    fn pass() -> Self {
        Self { pass: true, witness: None }
    }

    fn fail(state: usize, lotteries: Vec<usize>, detail: String) -> Self {
        Self {
            pass: false,
            witness: Some(AxiomWitness { state, lotteries, detail }),
        }
    }
}

/// Bearability: every self-pair is an edge, i.e. p(L > L) = 1/2.
pub fn check_bearability(t: &Tensor, tol: f64) -> AxiomVerdict {
    for (x, px) in t.iter().enumerate() {
        for (l, row) in px.iter().enumerate() {
            if (row[l] - 0.5).abs() > tol {
                return AxiomVerdict::fail(
                    x,
                    vec![l],
                    format!("p(L > L) = {} (needs 1/2: self-pair must not abstain)", row[l]),
                );
            }
        }
    }
    AxiomVerdict::pass()
}

/// ZA and P imply ZA: a wedge (a, c, b) with same-polarity preferences from
/// the center c must close into a triangle.
pub fn check_wedge_axiom(t: &Tensor, tol: f64) -> AxiomVerdict {
    let m = t.len();
    for x in 0..m {
        let nl = t[x].len();
        for c in 0..nl {
            for a in 0..nl {
                if a == c || !is_edge(t, x, c, a, tol) {
                    continue;
                }
                for b in (a + 1)..nl {
                    if b == c || !is_edge(t, x, c, b, tol) {
                        continue;
                    }
                    let outward = prefers(t, x, c, a, tol) && prefers(t, x, c, b, tol);
                    let inward = prefers(t, x, a, c, tol) && prefers(t, x, b, c, tol);
                    if (outward || inward) && !is_edge(t, x, a, b, tol) {
                        return AxiomVerdict::fail(
                            x,
                            vec![a, c, b],
                            format!(
                                "wedge around {c} has aligned preferences but ({a}, {b}) abstains \
                                 (pair-sum {})",
                                t[x][a][b] + t[x][b][a]
                            ),
                        );
                    }
                }
            }
        }
    }
    AxiomVerdict::pass()
}

/// P implies ZA and P: every preference must be realized by a directed path
/// of preferred zero-abstention steps. Simple paths suffice, so the search
/// is a BFS over at most |lotteries| hops.
pub fn check_path_axiom(t: &Tensor, tol: f64) -> AxiomVerdict {
    let m = t.len();
    for x in 0..m {
        let nl = t[x].len();
        // directed step u -> v: zero abstention and u preferred
        let mut adj = vec![Vec::new(); nl];
        for u in 0..nl {
            for v in 0..nl {
                if u != v && is_edge(t, x, u, v, tol) && prefers(t, x, u, v, tol) {
                    adj[u].push(v);
                }
            }
        }
        for a in 0..nl {
            for b in 0..nl {
                if a == b || !prefers(t, x, a, b, tol) {
                    continue;
                }
                let mut seen = vec![false; nl];
                let mut queue = std::collections::VecDeque::from([a]);
                seen[a] = true;
                let mut found = false;
                while let Some(u) = queue.pop_front() {
                    if u == b {
                        found = true;
                        break;
                    }
                    for &v in &adj[u] {
                        if !seen[v] {
                            seen[v] = true;
                            queue.push_back(v);
                        }
                    }
                }
                if !found {
                    return AxiomVerdict::fail(
                        x,
                        vec![a, b],
                        format!(
                            "{a} is preferred to {b} but no zero-abstention preference path \
                             connects them"
                        ),
                    );
                }
            }
        }
    }
    AxiomVerdict::pass()
}

/// Search mode for the monotonicity check.
#[derive(Clone, Copy, Debug)]
pub enum MonotonicityMode {
    Exhaustive,
    Sampled { k: usize, seed: u64 },
}

/// Monotonicity over 6-tuples (see module docs). Exhaustive mode enumerates
/// all tuples; sampled mode draws k uniformly.
pub fn check_monotonicity(t: &Tensor, tol: f64, mode: MonotonicityMode) -> AxiomVerdict {
    let check_tuple = |x: usize, l: [usize; 6]| -> Option<AxiomVerdict> {
        let [l1, l2, l3, l4, l5, l6] = l;
        // the triangle and the wedge are three-vertex sets
        if l1 == l2 || l2 == l3 || l1 == l3 || l4 == l5 || l5 == l6 || l4 == l6 {
            return None;
        }
        let triangle = is_edge(t, x, l1, l2, tol)
            && is_edge(t, x, l2, l3, tol)
            && is_edge(t, x, l1, l3, tol);
        let wedge = is_edge(t, x, l4, l5, tol) && is_edge(t, x, l5, l6, tol);
        if !(triangle && wedge) {
            return None;
        }
        // dominance premises are strict: an exact tie in an empirical table
        // certifies nothing about relative preference strength
        if t[x][l1][l2] <= t[x][l4][l5] + tol || t[x][l2][l3] <= t[x][l5][l6] + tol {
            return None;
        }
        if !is_edge(t, x, l4, l6, tol) {
            return Some(AxiomVerdict::fail(
                x,
                l.to_vec(),
                format!(
                    "dominating comparisons hold but ({l4}, {l6}) abstains (pair-sum {})",
                    t[x][l4][l6] + t[x][l6][l4]
                ),
            ));
        }
        if t[x][l1][l3] < t[x][l4][l6] - tol {
            return Some(AxiomVerdict::fail(
                x,
                l.to_vec(),
                format!(
                    "p(L1 > L3) = {} < p(L4 > L6) = {} despite dominance in both legs",
                    t[x][l1][l3], t[x][l4][l6]
                ),
            ));
        }
        None
    };
    match mode {
        MonotonicityMode::Exhaustive => {
            for x in 0..t.len() {
                let nl = t[x].len();
                for l1 in 0..nl {
                    for l2 in 0..nl {
                        for l3 in 0..nl {
                            if !(is_edge(t, x, l1, l2, tol)
                                && is_edge(t, x, l2, l3, tol)
                                && is_edge(t, x, l1, l3, tol))
                            {
                                continue;
                            }
                            for l4 in 0..nl {
                                for l5 in 0..nl {
                                    if !is_edge(t, x, l4, l5, tol) {
                                        continue;
                                    }
                                    for l6 in 0..nl {
                                        if let Some(v) =
                                            check_tuple(x, [l1, l2, l3, l4, l5, l6])
                                        {
                                            return v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            AxiomVerdict::pass()
        }
        MonotonicityMode::Sampled { k, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..k {
                let x = rng.gen_range(0..t.len());
                let nl = t[x].len();
                let l: [usize; 6] = std::array::from_fn(|_| rng.gen_range(0..nl));
                if let Some(v) = check_tuple(x, l) {
                    return v;
                }
            }
            AxiomVerdict::pass()
        }
    }
}

/// Full verification certificate, serialized by the CLI.
#[derive(Clone, Debug, Serialize)]
pub struct KlstCertificate {
    pub alpha_samples: Vec<f64>,
    pub alpha_mono: f64,
    pub tol: f64,
    /// (alpha, verdict) per sampled alpha, in sample order.
    pub bearability: Vec<(f64, AxiomVerdict)>,
    pub wedge: Vec<(f64, AxiomVerdict)>,
    pub path: Vec<(f64, AxiomVerdict)>,
    pub monotonicity: AxiomVerdict,
    pub monotonicity_exhaustive: bool,
    pub pass: bool,
}

/// Runs the three structure axioms at every sampled alpha and monotonicity
/// at `alpha_mono` (exhaustively when the lottery space is small).
pub fn verify_klst(
    table: &ChoiceTable,
    alpha_samples: &[f64],
    alpha_mono: f64,
    tol: f64,
) -> Result<KlstCertificate> {
    let mut bearability = Vec::new();
    let mut wedge = Vec::new();
    let mut path = Vec::new();
    let mut pass = true;
    for &a in alpha_samples {
        let space = expand(table, a)?;
        let b = check_bearability(&space.probs, tol);
        let w = check_wedge_axiom(&space.probs, tol);
        let p = check_path_axiom(&space.probs, tol);
        pass = pass && b.pass && w.pass && p.pass;
        bearability.push((a, b));
        wedge.push((a, w));
        path.push((a, p));
    }
    let mono_space = expand(table, alpha_mono)?;
    let exhaustive = mono_space.n_lotteries() <= EXHAUSTIVE_LIMIT;
    let mode = if exhaustive {
        MonotonicityMode::Exhaustive
    } else {
        MonotonicityMode::Sampled { k: 200_000, seed: 0 }
    };
    let monotonicity = check_monotonicity(&mono_space.probs, tol, mode);
    pass = pass && monotonicity.pass;
    Ok(KlstCertificate {
        alpha_samples: alpha_samples.to_vec(),
        alpha_mono,
        tol,
        bearability,
        wedge,
        path,
        monotonicity,
        monotonicity_exhaustive: exhaustive,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Fechnerian representation
// ---------------------------------------------------------------------------

/// A fitted representation p(y > y' | x) = F(u(x,y) - u(x,y')).
#[derive(Clone, Debug, Serialize)]
pub struct Representation {
    /// Per-state utilities, centered to sum to zero within each state.
    pub u: Vec<Vec<f64>>,
    /// Knots (z, F(z)) of the piecewise-linear monotone interpolant.
    pub knots: Vec<(f64, f64)>,
    /// max |F(u - u') - p| over all table entries.
    pub residual: f64,
    pub strictly_increasing: bool,
}

impl Representation {
    /// Piecewise-linear evaluation, clamped to the endpoint values.
    pub fn f_eval(&self, z: f64) -> f64 {
        let k = &self.knots;
        if k.is_empty() {
            return 0.5;
        }
        if z <= k[0].0 {
            return k[0].1;
        }
        if z >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let idx = k.partition_point(|&(zk, _)| zk <= z);
        let (z0, p0) = k[idx - 1];
        let (z1, p1) = k[idx];
        if z1 == z0 {
            return p0;
        }
        p0 + (p1 - p0) * (z - z0) / (z1 - z0)
    }
}

const LOGIT_CLAMP: f64 = 1e-9;

/// Fits (u, F) from a table that passes the axioms: per-state utilities from
/// antisymmetrized log-odds averages, a hinge repair pass enforcing the
/// order equivalence "p(i > j) <= p(k > l) iff u_i - u_j <= u_k - u_l", and
/// a pooled isotonic fit of F over (u - u', p) pairs.
pub fn fit_representation(table: &ChoiceTable) -> Result<Representation> {
    table.validate()?;
    let n = table.n_actions();
    let tol = 1e-7;
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(table.n_states());
    for px in &table.probs {
        // antisymmetrized log-odds; exact utility differences for logistic
        // generators, order-faithful starting point otherwise
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let pij = px[i][j].clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                let pji = px[j][i].clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                d[i][j] = 0.5 * (logit(pij) - logit(pji));
            }
        }
        let mut u: Vec<f64> = (0..n)
            .map(|i| d[i].iter().sum::<f64>() / n as f64)
            .collect();
        // hinge repair of order-equivalence violations over quadruples
        let violations = |u: &[f64]| -> Vec<(usize, usize, usize, usize, f64)> {
            let mut v = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            if px[i][j] < px[k][l] - tol {
                                let gap = (u[i] - u[j]) - (u[k] - u[l]);
                                if gap > tol {
                                    v.push((i, j, k, l, gap));
                                }
                            }
                        }
                    }
                }
            }
            v
        };
        let mut sweeps = 0;
        loop {
            let v = violations(&u);
            if v.is_empty() {
                break;
            }
            sweeps += 1;
            if sweeps > 2000 {
                return Err(Error::NotRepresentable(format!(
                    "order-equivalence violations persist after repair: \
                     p({} > {}) < p({} > {}) but utility gaps disagree by {}",
                    v[0].0, v[0].1, v[0].2, v[0].3, v[0].4
                )));
            }
            for (i, j, k, l, gap) in v {
                let step = 0.05 * gap;
                u[i] -= step;
                u[j] += step;
                u[k] += step;
                u[l] -= step;
            }
        }
        let mean = u.iter().sum::<f64>() / n as f64;
        for ui in &mut u {
            *ui -= mean;
        }
        us.push(u);
    }

    // pooled scatter (u_i - u_j, p_ij) including diagonals at z = 0
    let mut scatter: Vec<(f64, f64)> = Vec::new();
    for (x, px) in table.probs.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                scatter.push((us[x][i] - us[x][j], px[i][j]));
            }
        }
    }
    scatter.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge ties in z, then pool adjacent violators for a monotone fit
    let mut merged: Vec<(f64, f64, f64)> = Vec::new(); // (z, sum p, weight)
    for (z, p) in scatter {
        match merged.last_mut() {
            Some(last) if (z - last.0).abs() <= 1e-12 => {
                last.1 += p;
                last.2 += 1.0;
            }
            _ => merged.push((z, p, 1.0)),
        }
    }
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::new(); // (z_lo, z_hi, sum, w)
    for (z, s, w) in merged {
        blocks.push((z, z, s, w));
        while blocks.len() >= 2 {
            let (b2, b1) = (blocks[blocks.len() - 1], blocks[blocks.len() - 2]);
            if b2.2 / b2.3 < b1.2 / b1.3 {
                blocks.pop();
                blocks.pop();
                blocks.push((b1.0, b2.1, b1.2 + b2.2, b1.3 + b2.3));
            } else {
                break;
            }
        }
    }
    let mut knots: Vec<(f64, f64)> = Vec::new();
    for (zlo, zhi, s, w) in blocks {
        let v = s / w;
        knots.push((0.5 * (zlo + zhi), v));
    }
    knots.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12);
    let strictly_increasing = knots.windows(2).all(|w| w[1].1 > w[0].1 + 1e-12)
        || knots.len() <= 1;

    let rep = Representation { u: us, knots, residual: 0.0, strictly_increasing };
    let mut residual = 0.0f64;
    for (x, px) in table.probs.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                residual = residual.max((rep.f_eval(rep.u[x][i] - rep.u[x][j]) - px[i][j]).abs());
            }
        }
    }
    Ok(Representation { residual, ..rep })
}

/// Builds an exact Fechnerian table P = s F(u - u') from a choice function
/// and utilities; `abstention_scale` s < 1 injects uniform abstention mass.
pub fn generate_from_model(
    f: &ScalarFn,
    u: &[Vec<f64>],
    abstention_scale: Option<f64>,
) -> Result<ChoiceTable> {
    let rep = check_f_condition(f, &f_condition_sample());
    if !rep.pass {
        let (z, s) = rep.witness.unwrap_or((0.0, f64::NAN));
        return Err(Error::Ineligible(format!(
            "choice function violates F(-z) + F(z) <= 1: sum {s} at z = {z}"
        )));
    }
    let scale = abstention_scale.unwrap_or(1.0);
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Domain(format!("abstention scale must be in (0,1], got {scale}")));
    }
    let n = u.first().map(|row| row.len()).unwrap_or(0);
    if n == 0 || u.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("utility table must be rectangular and nonempty".into()));
    }
    let probs: Tensor = u
        .iter()
        .map(|row| {
            (0..n)
                .map(|i| (0..n).map(|j| scale * f.eval(row[i] - row[j])).collect())
                .collect()
        })
        .collect();
    let table = ChoiceTable {
        states: (0..u.len()).map(|x| format!("x{x}")).collect(),
        actions: (0..n).map(|y| format!("y{y}")).collect(),
        probs,
    };
    table.validate()?;
    Ok(table)
}
