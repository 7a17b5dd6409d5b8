//! Desk-scale synthetic experiments: sample preferences from a ground-truth
//! reward model, fit a tabular policy by descending a pipeline objective,
//! and evaluate how well reward differences are recovered.
//!
//! Policies are softmax-parameterized logit tables, so objectives are
//! invariant under per-state constant logit shifts. Gradients are analytic
//! (chained through the surrogate, the loss selection G, and the softmax
//! Jacobian) with a finite-difference gate exercised in the test suite. An
//! expected-objective mode weights every ordered pair by its ground-truth
//! preference probability, removing Monte-Carlo noise from tolerance-tight
//! checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::core_math::ProbVector;
use crate::pipeline::{expected_objective, g_difference, objective, Pipeline, Triple};
use crate::proper_loss::{check_f_condition, f_condition_sample};
use crate::{Error, Result, ScalarFn};

/// Softmax-parameterized policy over states and actions.
#[derive(Clone, Debug)]
pub struct TabularPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { logits: vec![vec![0.0; n]; m] }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        Self { logits }
    }

    pub fn n_states(&self) -> usize {
        self.logits.len()
    }

    pub fn prob(&self, x: usize) -> ProbVector {
        let row = &self.logits[x];
        let zmax = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|&z| (z - zmax).exp()).collect();
        let s: f64 = w.iter().sum();
        ProbVector::new(w.iter().map(|wi| wi / s).collect()).expect("softmax is a distribution")
    }

    pub fn probs(&self) -> Vec<ProbVector> {
        (0..self.n_states()).map(|x| self.prob(x)).collect()
    }
}

/// A sampled preference task with its exact generating quantities kept for
/// expected-objective training and evaluation.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub rewards: Vec<Vec<f64>>,
    pub pi_ref: Vec<ProbVector>,
    pub dataset: Vec<Triple>,
    /// Exact pairwise preference probabilities F_gen(r - r').
    pub pref_probs: Vec<Vec<Vec<f64>>>,
    pub abstentions: usize,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn n_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rewards[0].len()
    }
}

/// Samples `n_samples` comparisons from F_gen(r - r'); comparisons where
/// neither side is chosen (abstention mass 1 - F(z) - F(-z)) are counted and
/// excluded from the dataset.
pub fn generate(
    rewards: &[Vec<f64>],
    f_gen: &ScalarFn,
    n_samples: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    let rep = check_f_condition(f_gen, &f_condition_sample());
    if !rep.pass {
        return Err(Error::Ineligible("generator choice function fails F(-z) + F(z) <= 1".into()));
    }
    let m = rewards.len();
    let n = rewards.first().map(|r| r.len()).unwrap_or(0);
    if m == 0 || n < 2 || rewards.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("rewards must be a nonempty m x n table with n >= 2".into()));
    }
    let pref_probs: Vec<Vec<Vec<f64>>> = rewards
        .iter()
        .map(|r| {
            (0..n)
                .map(|i| (0..n).map(|j| f_gen.eval(r[i] - r[j])).collect())
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = Vec::with_capacity(n_samples);
    let mut abstentions = 0;
    for _ in 0..n_samples {
        let x = rng.gen_range(0..m);
        let y = rng.gen_range(0..n);
        let mut yp = rng.gen_range(0..n - 1);
        if yp >= y {
            yp += 1;
        }
        let p_fwd = pref_probs[x][y][yp];
        let p_bwd = pref_probs[x][yp][y];
        let u: f64 = rng.gen();
        if u < p_fwd {
            dataset.push(Triple { x, winner: y, loser: yp });
        } else if u < p_fwd + p_bwd {
            dataset.push(Triple { x, winner: yp, loser: y });
        } else {
            abstentions += 1;
        }
    }
    let pi_ref = vec![ProbVector::uniform(n); m];
    Ok(SyntheticTask {
        rewards: rewards.to_vec(),
        pi_ref,
        dataset,
        pref_probs,
        abstentions,
        seed,
    })
}

/// Data source for objective and gradient evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    Sampled,
    Expected,
}

fn task_objective(pipe: &Pipeline, policy: &TabularPolicy, task: &SyntheticTask, mode: DataMode) -> Result<f64> {
    let pi = policy.probs();
    match mode {
        DataMode::Sampled => objective(pipe, &pi, &task.pi_ref, &task.dataset),
        DataMode::Expected => expected_objective(pipe, &pi, &task.pi_ref, &task.pref_probs),
    }
}

/// Analytic objective gradient with respect to the policy logits: the chain
/// through the surrogate derivative, the selection Jacobian dG/dp, and the
/// softmax Jacobian dp_m/dtheta_k = p_m (1[m=k] - p_k).
pub fn objective_gradient(
    pipe: &Pipeline,
    policy: &TabularPolicy,
    task: &SyntheticTask,
    mode: DataMode,
) -> Result<Vec<Vec<f64>>> {
    let m = policy.n_states();
    let n = pipe.n();
    let pi = policy.probs();
    let mut grad = vec![vec![0.0; n]; m];
    // dG_i/dtheta_k per state, shared across pairs
    let mut dg = Vec::with_capacity(m);
    for p in pi.iter() {
        let jac = pipe.loss_b.g_jacobian(p.entries()); // dG_i/dp_c
        let pe = p.entries();
        let mut dgx = vec![vec![0.0; n]; n]; // [i][k]
        for i in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    let dpdt = pe[c] * (if c == k { 1.0 } else { 0.0 } - pe[k]);
                    acc += jac[i][c] * dpdt;
                }
                dgx[i][k] = acc;
            }
        }
        dg.push(dgx);
    }
    let mut weight_sum = 0.0;
    let mut add_pair = |x: usize, w: usize, l: usize, weight: f64, grad: &mut Vec<Vec<f64>>| {
        let z = g_difference(&pipe.loss_b, &pi[x], &task.pi_ref[x], w, l);
        let d = pipe.surrogate.deriv(z - pipe.gamma);
        for k in 0..n {
            grad[x][k] += weight * d * (dg[x][w][k] - dg[x][l][k]);
        }
        weight_sum += weight;
    };
    match mode {
        DataMode::Sampled => {
            if task.dataset.is_empty() {
                return Err(Error::Domain("empty preference dataset".into()));
            }
            for t in &task.dataset {
                add_pair(t.x, t.winner, t.loser, 1.0, &mut grad);
            }
        }
        DataMode::Expected => {
            for (x, px) in task.pref_probs.iter().enumerate() {
                for w in 0..n {
                    for l in 0..n {
                        if w != l && px[w][l] > 0.0 {
                            add_pair(x, w, l, px[w][l], &mut grad);
                        }
                    }
                }
            }
        }
    }
    for row in &mut grad {
        for g in row.iter_mut() {
            *g /= weight_sum;
        }
    }
    Ok(grad)
}

/// One row of the optimization trace.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub accuracy: f64,
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,objective,grad_norm,accuracy\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.step, row.objective, row.grad_norm, row.accuracy
        ));
    }
    out
}

/// Gradient descent on the logits with step-halving on objective increase.
pub fn train(
    pipe: &Pipeline,
    task: &SyntheticTask,
    steps: usize,
    lr: f64,
    mode: DataMode,
) -> Result<(TabularPolicy, Vec<TraceRow>)> {
    let mut policy = TabularPolicy::zeros(task.n_states(), task.n_actions());
    let mut trace = Vec::with_capacity(steps + 1);
    let mut obj = task_objective(pipe, &policy, task, mode)?;
    if !obj.is_finite() {
        return Err(Error::Domain("objective not finite at initialization".into()));
    }
    let mut lr = lr;
    for step in 0..steps {
        let grad = objective_gradient(pipe, &policy, task, mode)?;
        let grad_norm = grad
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        trace.push(TraceRow {
            step,
            objective: obj,
            grad_norm,
            accuracy: evaluate(pipe, &policy, task, mode)?.pairwise_accuracy,
        });
        if lr == 0.0 || grad_norm == 0.0 {
            continue;
        }
        loop {
            let mut cand = policy.clone();
            for (row, grow) in cand.logits.iter_mut().zip(grad.iter()) {
                for (t, g) in row.iter_mut().zip(grow.iter()) {
                    *t -= lr * g;
                }
            }
            let cobj = task_objective(pipe, &cand, task, mode)?;
            if cobj.is_nan() {
                return Err(Error::NonConvergence(format!("objective became NaN at step {step}")));
            }
            if cobj <= obj || lr < 1e-12 {
                policy = cand;
                obj = cobj;
                break;
            }
            lr *= 0.5;
        }
    }
    trace.push(TraceRow {
        step: steps,
        objective: obj,
        grad_norm: 0.0,
        accuracy: evaluate(pipe, &policy, task, mode)?.pairwise_accuracy,
    });
    Ok((policy, trace))
}

/// Evaluation metrics against the ground-truth rewards.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Metrics {
    /// Ordered-pair accuracy of recovered reward-difference signs; exact
    /// ties get half credit.
    pub pairwise_accuracy: f64,
    /// Pearson correlation of recovered vs true reward differences.
    pub reward_corr: f64,
    /// Sign agreement restricted to pairs with |r - r'| >= 1.
    pub high_margin_sign_agreement: f64,
    pub objective: f64,
}

/// Recovered reward differences (through the pipeline's own G), compared to
/// the generator rewards.
pub fn evaluate(
    pipe: &Pipeline,
    policy: &TabularPolicy,
    task: &SyntheticTask,
    mode: DataMode,
) -> Result<Metrics> {
    let n = task.n_actions();
    let pi = policy.probs();
    let mut got = Vec::new();
    let mut want = Vec::new();
    for x in 0..task.n_states() {
        for i in 0..n {
            for j in (i + 1)..n {
                got.push(g_difference(&pipe.loss_b, &pi[x], &task.pi_ref[x], i, j));
                want.push(task.rewards[x][i] - task.rewards[x][j]);
            }
        }
    }
    let mut correct = 0.0;
    let mut counted = 0usize;
    let mut hm_correct = 0.0;
    let mut hm_counted = 0usize;
    for (g, w) in got.iter().zip(want.iter()) {
        if w.abs() > 1e-9 {
            counted += 1;
            if *g == 0.0 {
                correct += 0.5;
            } else if g.signum() == w.signum() {
                correct += 1.0;
            }
            if w.abs() >= 1.0 {
                hm_counted += 1;
                if *g != 0.0 && g.signum() == w.signum() {
                    hm_correct += 1.0;
                }
            }
        }
    }
    Ok(Metrics {
        pairwise_accuracy: if counted > 0 { correct / counted as f64 } else { 1.0 },
        reward_corr: pearson(&got, &want),
        high_margin_sign_agreement: if hm_counted > 0 {
            hm_correct / hm_counted as f64
        } else {
            1.0
        },
        objective: task_objective(pipe, policy, task, mode)?,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if n < 2.0 {
        return 1.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_math::{sigmoid, Monotonicity};
    use crate::pipeline::PipelineConfig;

    fn dpo(n: usize) -> Pipeline {
        serde_json::from_str::<PipelineConfig>(r#"{"recipe": "pppo", "loss": "log"}"#)
            .unwrap()
            .build(n)
            .unwrap()
    }

    #[test]
    fn empirical_frequencies_match_generator() {
        let task = generate(&[vec![1.0, 0.0]], &ScalarFn::sigmoid(), 100_000, 7).unwrap();
        let wins_0 = task
            .dataset
            .iter()
            .filter(|t| t.winner == 0)
            .count() as f64;
        let freq = wins_0 / task.dataset.len() as f64;
        assert!((freq - sigmoid(1.0)).abs() < 1e-2, "freq {freq}");
        assert_eq!(task.abstentions, 0);

        let flat = generate(&[vec![0.0, 0.0]], &ScalarFn::sigmoid(), 100_000, 7).unwrap();
        let f0 = flat.dataset.iter().filter(|t| t.winner == 0).count() as f64
            / flat.dataset.len() as f64;
        assert!((f0 - 0.5).abs() < 1e-2);
    }

    #[test]
    fn scaled_generator_abstains() {
        let f = ScalarFn::new(
            |z: f64| 0.8 * sigmoid(z),
            (f64::NEG_INFINITY, f64::INFINITY),
            Monotonicity::Increasing,
        );
        let task = generate(&[vec![0.5, -0.5]], &f, 100_000, 11).unwrap();
        let rate = task.abstentions as f64 / 100_000.0;
        assert!((rate - 0.2).abs() < 1e-2, "abstention rate {rate}");
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate(&[vec![0.4, -0.1, 0.2]], &ScalarFn::sigmoid(), 5_000, 42).unwrap();
        let b = generate(&[vec![0.4, -0.1, 0.2]], &ScalarFn::sigmoid(), 5_000, 42).unwrap();
        assert_eq!(a.dataset.len(), b.dataset.len());
        assert!(a
            .dataset
            .iter()
            .zip(b.dataset.iter())
            .all(|(s, t)| s.x == t.x && s.winner == t.winner && s.loser == t.loser));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let pipe = dpo(3);
        let task = generate(&[vec![0.9, 0.0, -0.4], vec![-0.2, 0.3, 0.1]], &ScalarFn::sigmoid(), 500, 3)
            .unwrap();
        let mut policy = TabularPolicy::zeros(2, 3);
        policy.logits[0] = vec![0.3, -0.1, 0.2];
        policy.logits[1] = vec![-0.4, 0.1, 0.0];
        for mode in [DataMode::Sampled, DataMode::Expected] {
            let grad = objective_gradient(&pipe, &policy, &task, mode).unwrap();
            for x in 0..2 {
                for k in 0..3 {
                    let mut pp = policy.clone();
                    let h = 1e-6;
                    pp.logits[x][k] += h;
                    let up = task_objective(&pipe, &pp, &task, mode).unwrap();
                    pp.logits[x][k] -= 2.0 * h;
                    let dn = task_objective(&pipe, &pp, &task, mode).unwrap();
                    let fd = (up - dn) / (2.0 * h);
                    assert!(
                        (grad[x][k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "({x},{k}): {} vs {fd}",
                        grad[x][k]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_policy() {
        let pipe = dpo(2);
        let task = generate(&[vec![1.0, 0.0]], &ScalarFn::sigmoid(), 200, 1).unwrap();
        let (policy, _) = train(&pipe, &task, 10, 0.0, DataMode::Sampled).unwrap();
        assert!(policy.logits.iter().flatten().all(|&t| t == 0.0));
    }

    #[test]
    fn expected_dpo_training_recovers_reward_order() {
        let pipe = dpo(3);
        let task = generate(
            &[vec![1.2, 0.0, -0.8], vec![-0.5, 0.7, 0.1]],
            &ScalarFn::sigmoid(),
            10,
            5,
        )
        .unwrap();
        let (policy, trace) = train(&pipe, &task, 400, 1.0, DataMode::Expected).unwrap();
        let m = evaluate(&pipe, &policy, &task, DataMode::Expected).unwrap();
        assert!(m.reward_corr >= 0.99, "corr {}", m.reward_corr);
        assert!(m.pairwise_accuracy >= 0.95, "accuracy {}", m.pairwise_accuracy);
        // smoothed objective decreases front to back
        assert!(trace.last().unwrap().objective < trace[0].objective);
    }

    #[test]
    fn per_state_logit_shift_is_invariant() {
        let pipe = dpo(3);
        let task = generate(&[vec![0.6, -0.2, 0.0]], &ScalarFn::sigmoid(), 300, 9).unwrap();
        let mut p1 = TabularPolicy::zeros(1, 3);
        p1.logits[0] = vec![0.5, -0.3, 0.1];
        let mut p2 = p1.clone();
        for t in &mut p2.logits[0] {
            *t += 7.3;
        }
        let o1 = task_objective(&pipe, &p1, &task, DataMode::Sampled).unwrap();
        let o2 = task_objective(&pipe, &p2, &task, DataMode::Sampled).unwrap();
        assert!((o1 - o2).abs() < 1e-10);
        let m1 = evaluate(&pipe, &p1, &task, DataMode::Sampled).unwrap();
        let m2 = evaluate(&pipe, &p2, &task, DataMode::Sampled).unwrap();
        assert!((m1.reward_corr - m2.reward_corr).abs() < 1e-10);
    }

    #[test]
    fn ground_truth_policy_is_perfectly_ordered() {
        let rewards = vec![vec![2.0, 0.0, -2.0]];
        let pipe = dpo(3);
        let task = generate(&rewards, &ScalarFn::sigmoid(), 100, 2).unwrap();
        let policy = TabularPolicy::from_logits(rewards.clone());
        let m = evaluate(&pipe, &policy, &task, DataMode::Sampled).unwrap();
        assert!((m.pairwise_accuracy - 1.0).abs() < 1e-12);
        // the uniform policy recovers nothing: every pair ties
        let uniform = TabularPolicy::zeros(1, 3);
        let mu = evaluate(&pipe, &uniform, &task, DataMode::Sampled).unwrap();
        assert!((mu.pairwise_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_shape() {
        let pipe = dpo(2);
        let task = generate(&[vec![1.0, 0.0]], &ScalarFn::sigmoid(), 100, 4).unwrap();
        let (_, trace) = train(&pipe, &task, 5, 0.5, DataMode::Sampled).unwrap();
        let csv = trace_to_csv(&trace);
        assert_eq!(csv.lines().count(), trace.len() + 1);
        assert!(csv.starts_with("step,objective,grad_norm,accuracy"));
    }
}
