//! Return-conditioned policies pi(a | s, g): a tabular maximum-likelihood
//! learner, a one-hidden-layer neural learner trained on the same
//! negative log-likelihood, the infinite-data closed-form policy computed
//! from exact joint occupancies, and conditioned rollouts where the
//! return target decrements by observed rewards.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainTag, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::{JointOccupancy, StationaryPolicy, TabularMdp};
use crate::rng;

/// Maps conditioning returns to bin indices; bins are centered at
/// `origin + k * width`, so any grid-aligned return lands exactly on a
/// center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnBinner {
    pub width: f64,
    pub origin: f64,
}

impl ReturnBinner {
    pub fn new(width: f64, origin: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bin width must be positive, got {width}"
            )));
        }
        Ok(Self { width, origin })
    }

    pub fn bin(&self, g: f64) -> i64 {
        ((g - self.origin) / self.width).round() as i64
    }

    pub fn center(&self, bin: i64) -> f64 {
        self.origin + bin as f64 * self.width
    }
}

/// Anything that yields action probabilities given (t, s, g). Learned
/// policies ignore t; oracle wrappers may use it.
pub trait ConditionedPolicy {
    fn action_probs(&self, t: usize, s: usize, g: f64) -> Vec<f64>;
    fn num_actions(&self) -> usize;
    /// True when the query falls outside the policy's training support
    /// and a uniform fallback is returned; rollouts tally these.
    fn is_fallback(&self, _t: usize, _s: usize, _g: f64) -> bool {
        false
    }
}

/// Conditional action counts indexed by (state, return bin).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularRcslPolicy {
    pub binner: ReturnBinner,
    pub smoothing: f64,
    num_states: usize,
    num_actions: usize,
    counts: HashMap<(usize, i64), Vec<u64>>,
}

impl TabularRcslPolicy {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Conditional probabilities (counts + alpha) / (total + alpha |A|).
    /// A never-observed (s, bin) cell falls back to uniform.
    pub fn probs(&self, s: usize, g: f64) -> Vec<f64> {
        let bin = self.binner.bin(g);
        let a_n = self.num_actions;
        match self.counts.get(&(s, bin)) {
            Some(row) => {
                let total: u64 = row.iter().sum();
                let denom = total as f64 + self.smoothing * a_n as f64;
                if denom <= 0.0 {
                    return vec![1.0 / a_n as f64; a_n];
                }
                row.iter()
                    .map(|&c| (c as f64 + self.smoothing) / denom)
                    .collect()
            }
            None => vec![1.0 / a_n as f64; a_n],
        }
    }

    pub fn seen(&self, s: usize, g: f64) -> bool {
        self.counts.contains_key(&(s, self.binner.bin(g)))
    }

    /// Empirical NLL of a dataset under this policy (mean over steps).
    pub fn nll(&self, ds: &Dataset) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for traj in ds.trajectories() {
            for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
                let p = self.probs(s, traj.rtg[t]);
                total -= p[a].max(1e-300).ln();
                n += 1;
            }
        }
        total / n as f64
    }

    pub fn to_json(&self) -> String {
        // HashMap keys are not valid JSON keys; flatten deterministically
        let mut rows: Vec<(usize, i64, Vec<u64>)> = self
            .counts
            .iter()
            .map(|(&(s, b), row)| (s, b, row.clone()))
            .collect();
        rows.sort();
        serde_json::to_string(&serde_json::json!({
            "kind": "tabular",
            "binner": self.binner,
            "smoothing": self.smoothing,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "counts": rows,
        }))
        .expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            binner: ReturnBinner,
            smoothing: f64,
            num_states: usize,
            num_actions: usize,
            counts: Vec<(usize, i64, Vec<u64>)>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        Ok(Self {
            binner: doc.binner,
            smoothing: doc.smoothing,
            num_states: doc.num_states,
            num_actions: doc.num_actions,
            counts: doc
                .counts
                .into_iter()
                .map(|(s, b, row)| ((s, b), row))
                .collect(),
        })
    }
}

impl ConditionedPolicy for TabularRcslPolicy {
    fn action_probs(&self, _t: usize, s: usize, g: f64) -> Vec<f64> {
        self.probs(s, g)
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn is_fallback(&self, _t: usize, s: usize, g: f64) -> bool {
        !self.seen(s, g)
    }
}

/// Exact co-occurrence counting of (s, bin(g), a) over all steps; the
/// global maximizer of the empirical NLL over tabular conditionals at
/// alpha = 0.
pub fn fit_tabular(ds: &Dataset, binner: ReturnBinner, smoothing: f64) -> Result<TabularRcslPolicy> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a policy on an empty dataset".into(),
        ));
    }
    if smoothing < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be nonnegative, got {smoothing}"
        )));
    }
    let mut num_states = 1;
    let mut num_actions = 1;
    for traj in ds.trajectories() {
        for &(s, a, _) in &traj.steps {
            num_states = num_states.max(s + 1);
            num_actions = num_actions.max(a + 1);
        }
    }
    let mut counts: HashMap<(usize, i64), Vec<u64>> = HashMap::new();
    for traj in ds.trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            let bin = binner.bin(traj.rtg[t]);
            counts.entry((s, bin)).or_insert_with(|| vec![0; num_actions])[a] += 1;
        }
    }
    Ok(TabularRcslPolicy {
        binner,
        smoothing,
        num_states,
        num_actions,
        counts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralTrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for NeuralTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 3e-4,
            epochs: 200,
            batch: 64,
            seed: 0,
        }
    }
}

/// One-hidden-layer softmax policy over actions; input is one-hot(s)
/// concatenated with the normalized conditioning return.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralRcslPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    pub hidden: usize,
    /// return normalization constants frozen from the training set
    pub g_mean: f64,
    pub g_std: f64,
    pub w1: Vec<f64>, // [hidden][num_states + 1]
    pub b1: Vec<f64>, // [hidden]
    pub w2: Vec<f64>, // [num_actions][hidden]
    pub b2: Vec<f64>, // [num_actions]
    pub config: NeuralTrainConfig,
}

impl NeuralRcslPolicy {
    fn input_dim(&self) -> usize {
        self.num_states + 1
    }

    fn forward(&self, s: usize, g: f64) -> (Vec<f64>, Vec<f64>) {
        let gn = (g - self.g_mean) / self.g_std;
        let idim = self.input_dim();
        let mut hidden = vec![0.0; self.hidden];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut z = self.b1[j] + self.w1[j * idim + s] + self.w1[j * idim + idim - 1] * gn;
            z = z.tanh();
            *h = z;
        }
        let mut logits = vec![0.0; self.num_actions];
        for (a, l) in logits.iter_mut().enumerate() {
            let mut z = self.b2[a];
            for (j, h) in hidden.iter().enumerate() {
                z += self.w2[a * self.hidden + j] * h;
            }
            *l = z;
        }
        (hidden, logits)
    }

    pub fn probs(&self, s: usize, g: f64) -> Vec<f64> {
        let (_, logits) = self.forward(s, g);
        softmax(&logits)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.extend(&self.b2);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        self.w1.copy_from_slice(&v[..n1]);
        self.b1.copy_from_slice(&v[n1..n1 + n2]);
        self.w2.copy_from_slice(&v[n1 + n2..n1 + n2 + n3]);
        self.b2.copy_from_slice(&v[n1 + n2 + n3..]);
    }
}

impl ConditionedPolicy for NeuralRcslPolicy {
    fn action_probs(&self, _t: usize, s: usize, g: f64) -> Vec<f64> {
        self.probs(s, g)
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Mean NLL of labeled (s, g, a) triples under the network.
pub fn neural_nll(policy: &NeuralRcslPolicy, samples: &[(usize, f64, usize)]) -> f64 {
    let mut total = 0.0;
    for &(s, g, a) in samples {
        let p = policy.probs(s, g);
        total -= p[a].max(1e-300).ln();
    }
    total / samples.len() as f64
}

/// Analytic gradient of the mean NLL in the flattened parameter order of
/// `params()`. Backprop through tanh and softmax cross-entropy.
pub fn neural_grad(policy: &NeuralRcslPolicy, samples: &[(usize, f64, usize)]) -> Vec<f64> {
    let idim = policy.input_dim();
    let hdim = policy.hidden;
    let adim = policy.num_actions;
    let mut gw1 = vec![0.0; policy.w1.len()];
    let mut gb1 = vec![0.0; policy.b1.len()];
    let mut gw2 = vec![0.0; policy.w2.len()];
    let mut gb2 = vec![0.0; policy.b2.len()];
    let n = samples.len() as f64;
    for &(s, g, a) in samples {
        let gn = (g - policy.g_mean) / policy.g_std;
        let (hidden, logits) = policy.forward(s, g);
        let probs = softmax(&logits);
        // d loss / d logit
        let mut dlogit = probs;
        dlogit[a] -= 1.0;
        for v in &mut dlogit {
            *v /= n;
        }
        let mut dhidden = vec![0.0; hdim];
        for ai in 0..adim {
            gb2[ai] += dlogit[ai];
            for j in 0..hdim {
                gw2[ai * hdim + j] += dlogit[ai] * hidden[j];
                dhidden[j] += dlogit[ai] * policy.w2[ai * hdim + j];
            }
        }
        for j in 0..hdim {
            let dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
            gb1[j] += dz;
            gw1[j * idim + s] += dz;
            gw1[j * idim + idim - 1] += dz * gn;
        }
    }
    let mut out = gw1;
    out.extend(gb1);
    out.extend(gw2);
    out.extend(gb2);
    out
}

/// Train the neural policy by mini-batch SGD with seeded shuffling.
/// Errors with the last finite epoch if the loss goes non-finite.
pub fn fit_neural(ds: &Dataset, cfg: &NeuralTrainConfig) -> Result<NeuralRcslPolicy> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a policy on an empty dataset".into(),
        ));
    }
    let mut num_states = 1;
    let mut num_actions = 1;
    let mut samples: Vec<(usize, f64, usize)> = Vec::new();
    for traj in ds.trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            num_states = num_states.max(s + 1);
            num_actions = num_actions.max(a + 1);
            samples.push((s, traj.rtg[t], a));
        }
    }
    let n = samples.len() as f64;
    let g_mean = samples.iter().map(|&(_, g, _)| g).sum::<f64>() / n;
    let g_var = samples
        .iter()
        .map(|&(_, g, _)| (g - g_mean).powi(2))
        .sum::<f64>()
        / n;
    let g_std = g_var.sqrt().max(1e-6);

    let idim = num_states + 1;
    let mut r = rng::stream(cfg.seed, &[rng::labels::FIT, 1]);
    use rand::Rng;
    let scale1 = (1.0 / idim as f64).sqrt();
    let scale2 = (1.0 / cfg.hidden as f64).sqrt();
    let mut policy = NeuralRcslPolicy {
        num_states,
        num_actions,
        hidden: cfg.hidden,
        g_mean,
        g_std,
        w1: (0..cfg.hidden * idim)
            .map(|_| r.random_range(-scale1..scale1))
            .collect(),
        b1: vec![0.0; cfg.hidden],
        w2: (0..num_actions * cfg.hidden)
            .map(|_| r.random_range(-scale2..scale2))
            .collect(),
        b2: vec![0.0; num_actions],
        config: cfg.clone(),
    };

    let initial = neural_nll(&policy, &samples);
    let mut last_finite = initial;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    use rand::seq::SliceRandom;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<(usize, f64, usize)> = chunk.iter().map(|&i| samples[i]).collect();
            let grad = neural_grad(&policy, &batch);
            let mut params = policy.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
            policy.set_params(&params);
        }
        let loss = neural_nll(&policy, &samples);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_loss: last_finite,
            });
        }
        last_finite = loss;
    }
    if last_finite > initial + 1e-9 {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            last_loss: last_finite,
        });
    }
    Ok(policy)
}

/// Infinite-data RCSL policy at one (t, s, f): the conditional action law
/// d(a|s) d(g = f | s, a) / d(g = f | s) from the exact joint occupancy.
pub fn oracle_rcsl_policy(
    mdp: &TabularMdp,
    beta: &StationaryPolicy,
    f_value: f64,
    t: usize,
    s: usize,
) -> Result<Vec<f64>> {
    let joint = crate::mdp::joint_occupancy(mdp, beta)?;
    oracle_rcsl_policy_from(&joint, mdp, f_value, t, s)
}

/// Same, reusing a precomputed joint occupancy.
pub fn oracle_rcsl_policy_from(
    joint: &JointOccupancy,
    mdp: &TabularMdp,
    f_value: f64,
    t: usize,
    s: usize,
) -> Result<Vec<f64>> {
    let k = mdp.grid_offset(f_value)?;
    joint
        .action_given_return(t, s, k)
        .ok_or(Error::ReturnCoverage {
            t,
            state: s,
            g: f_value,
        })
}

/// Return-target bookkeeping for conditioned rollouts: f decrements by
/// the observed reward each step, so f_t = f_0 - sum_{h<t} r_h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningFunction {
    pub initial_target: f64,
}

impl ConditioningFunction {
    pub fn new(initial_target: f64) -> Self {
        Self { initial_target }
    }
}

/// Sample an action from pi(. | s, g).
pub fn act<P: ConditionedPolicy + ?Sized, R: rand::Rng>(
    policy: &P,
    t: usize,
    s: usize,
    g: f64,
    rng: &mut R,
) -> usize {
    let probs = policy.action_probs(t, s, g);
    rng::sample_categorical(rng, &probs)
}

pub struct RolloutOutcome {
    pub trajectory: Trajectory,
    /// conditioning values f_t actually used at each step
    pub conditioning: Vec<f64>,
    /// steps answered by the uniform fallback (unseen conditioning bin)
    pub fallbacks: usize,
}

/// Roll out one episode with return-target conditioning.
pub fn rollout<P: ConditionedPolicy + ?Sized>(
    policy: &P,
    mdp: &TabularMdp,
    f: ConditioningFunction,
    seed: u64,
) -> Result<RolloutOutcome> {
    let mut r = rng::stream(seed, &[rng::labels::EVAL, 0]);
    rollout_with_rng(policy, mdp, f, &mut r)
}

pub fn rollout_with_rng<P: ConditionedPolicy + ?Sized, R: rand::Rng>(
    policy: &P,
    mdp: &TabularMdp,
    f: ConditioningFunction,
    r: &mut R,
) -> Result<RolloutOutcome> {
    if policy.num_actions() > mdp.num_actions() {
        return Err(Error::ShapeMismatch(
            "policy has more actions than the MDP".into(),
        ));
    }
    let mut state = rng::sample_categorical(r, mdp.initial_dist().as_slice().unwrap());
    let mut target = f.initial_target;
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut conditioning = Vec::with_capacity(mdp.horizon());
    let mut fallbacks = 0usize;
    for t in 0..mdp.horizon() {
        conditioning.push(target);
        if policy.is_fallback(t, state, target) {
            fallbacks += 1;
        }
        let action = act(policy, t, state, target, r);
        let reward = mdp.reward()[[state, action]];
        steps.push((state, action, reward));
        target -= reward;
        let row: Vec<f64> = (0..mdp.num_states())
            .map(|sj| mdp.transition()[[state, action, sj]])
            .collect();
        state = rng::sample_categorical(r, &row);
    }
    let mut trajectory = Trajectory {
        steps,
        rtg: Vec::new(),
        domain_tag: DomainTag::Target,
    };
    trajectory.recompute_rtg();
    Ok(RolloutOutcome {
        trajectory,
        conditioning,
        fallbacks,
    })
}

/// A stationary (time-indexed) policy wrapped as a conditioned policy
/// that ignores the return target; used to evaluate DP optima through
/// the conditioned-rollout machinery.
pub struct IgnoreReturn<'a>(pub &'a StationaryPolicy);

impl ConditionedPolicy for IgnoreReturn<'_> {
    fn action_probs(&self, t: usize, s: usize, _g: f64) -> Vec<f64> {
        self.0.action_probs(t.min(self.0.horizon() - 1), s).to_vec()
    }
    fn num_actions(&self) -> usize {
        self.0.num_actions()
    }
}
