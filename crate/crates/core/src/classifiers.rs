//! Binary classifier pair distinguishing source from target transitions,
//! and the reward correction derived from their log-odds difference.
//!
//! Features are one-hot over the joint (s, a, s') or (s, a) index, so the
//! hypothesis class is exactly expressive for tabular problems and the
//! trained optimum coincides with the empirical log-odds. Labels: 1 =
//! target, 0 = source. Training uses balanced class weighting so the
//! class-prior term cancels from the log-odds difference even when
//! |D_source| != |D_target|.

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng;

/// Probability clamp for predictions; logits clamp at +-log((1-e)/e).
pub const PROB_EPS: f64 = 1e-6;

pub fn logit_bound() -> f64 {
    ((1.0 - PROB_EPS) / PROB_EPS).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Sas,
    Sa,
}

/// Logistic model over one-hot tuple features plus a shared bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_kind: FeatureKind,
    pub num_states: usize,
    pub num_actions: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(feature_kind: FeatureKind, num_states: usize, num_actions: usize) -> Self {
        let dim = match feature_kind {
            FeatureKind::Sas => num_states * num_actions * num_states,
            FeatureKind::Sa => num_states * num_actions,
        };
        Self {
            feature_kind,
            num_states,
            num_actions,
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn feature_index(&self, s: usize, a: usize, s_next: usize) -> usize {
        match self.feature_kind {
            FeatureKind::Sas => (s * self.num_actions + a) * self.num_states + s_next,
            FeatureKind::Sa => s * self.num_actions + a,
        }
    }

    /// Raw log-odds for the target class, clamped.
    pub fn logit(&self, s: usize, a: usize, s_next: usize) -> f64 {
        let b = logit_bound();
        (self.weights[self.feature_index(s, a, s_next)] + self.bias).clamp(-b, b)
    }

    /// P(target | features), in [PROB_EPS, 1 - PROB_EPS].
    pub fn predict(&self, s: usize, a: usize, s_next: usize) -> f64 {
        let p = 1.0 / (1.0 + (-self.logit(s, a, s_next)).exp());
        p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    pub fn max_abs_logit(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| (w + self.bias).abs())
            .fold(0.0, f64::max)
    }
}

/// A labeled transition sample: (s, a, s', label) with label 1 = target.
pub type Sample = (usize, usize, usize, u8);

pub fn transitions_of(ds: &Dataset, label: u8) -> Vec<Sample> {
    let mut out = Vec::new();
    for traj in ds.trajectories() {
        for t in 0..traj.horizon().saturating_sub(1) {
            let (s, a, _) = traj.steps[t];
            let (s_next, _, _) = traj.steps[t + 1];
            out.push((s, a, s_next, label));
        }
    }
    out
}

/// Weighted binary cross-entropy over samples with l2 on the weights
/// (not the bias). `class_weight[label]` scales each sample's loss.
pub fn bce_loss(model: &LogisticModel, samples: &[Sample], class_weight: [f64; 2], l2: f64) -> f64 {
    let mut loss = 0.0;
    for &(s, a, s_next, y) in samples {
        let p = model.predict(s, a, s_next);
        let w = class_weight[y as usize];
        loss -= w * if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    loss /= samples.len() as f64;
    loss + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of `bce_loss` in (weights, bias), flattened with the
/// bias last. Matches central finite differences; see tests.
pub fn bce_grad(
    model: &LogisticModel,
    samples: &[Sample],
    class_weight: [f64; 2],
    l2: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; model.weights.len() + 1];
    let n = samples.len() as f64;
    for &(s, a, s_next, y) in samples {
        let p = model.predict(s, a, s_next);
        let g = class_weight[y as usize] * (p - y as f64) / n;
        grad[model.feature_index(s, a, s_next)] += g;
        *grad.last_mut().unwrap() += g;
    }
    for (gi, w) in grad.iter_mut().zip(&model.weights) {
        *gi += l2 * w;
    }
    grad
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 200,
            batch: 256,
            seed: 0,
            l2: 1e-6,
        }
    }
}

/// Train the (sas, sa) classifier pair on two datasets by mini-batch
/// gradient descent on the balanced cross-entropy.
pub fn train_classifiers(
    source_ds: &Dataset,
    target_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(LogisticModel, LogisticModel)> {
    if source_ds.is_empty() || target_ds.is_empty() {
        return Err(Error::InvalidArgument(
            "classifier training needs nonempty source and target datasets".into(),
        ));
    }
    let mut samples = transitions_of(source_ds, 0);
    samples.extend(transitions_of(target_ds, 1));
    let n_tgt = samples.iter().filter(|s| s.3 == 1).count();
    let n_src = samples.len() - n_tgt;
    if n_src == 0 || n_tgt == 0 {
        return Err(Error::InvalidArgument(
            "both classes need at least one transition".into(),
        ));
    }
    // balanced weighting: each class contributes half the effective mass
    let total = samples.len() as f64;
    let class_weight = [total / (2.0 * n_src as f64), total / (2.0 * n_tgt as f64)];

    let (s_n, a_n) = infer_dims(&samples);
    let sas = train_one(FeatureKind::Sas, s_n, a_n, &samples, class_weight, cfg)?;
    let sa = train_one(FeatureKind::Sa, s_n, a_n, &samples, class_weight, cfg)?;
    Ok((sas, sa))
}

fn infer_dims(samples: &[Sample]) -> (usize, usize) {
    let mut s_n = 0;
    let mut a_n = 0;
    for &(s, a, s2, _) in samples {
        s_n = s_n.max(s + 1).max(s2 + 1);
        a_n = a_n.max(a + 1);
    }
    (s_n, a_n)
}

fn train_one(
    kind: FeatureKind,
    s_n: usize,
    a_n: usize,
    samples: &[Sample],
    class_weight: [f64; 2],
    cfg: &TrainConfig,
) -> Result<LogisticModel> {
    let mut model = LogisticModel::zeros(kind, s_n, a_n);
    let first_loss = bce_loss(&model, samples, class_weight, cfg.l2);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut r = rng::stream(cfg.seed, &[rng::labels::CLASSIFIER, kind as u64]);
    let n = samples.len() as f64;
    // linear lr decay plus tail averaging: mini-batch noise (the shared
    // bias takes the whole batch gradient every step) otherwise leaves
    // the iterates wandering around the optimum instead of on it
    let avg_from = cfg.epochs - cfg.epochs / 4;
    let mut avg_weights = vec![0.0f64; model.weights.len()];
    let mut avg_bias = 0.0f64;
    let mut avg_count = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * (1.0 - epoch as f64 / cfg.epochs as f64).max(0.05);
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch.max(1)) {
            // per-sample gradients scaled as if the batch represented the
            // whole dataset, so lr has the same meaning at any batch size
            let scale = n / chunk.len() as f64;
            let mut grad_updates: Vec<(usize, f64)> = Vec::with_capacity(chunk.len());
            let mut grad_bias = 0.0;
            for &i in chunk {
                let (s, a, s2, y) = samples[i];
                let p = model.predict(s, a, s2);
                let g = class_weight[y as usize] * (p - y as f64) / n * scale;
                grad_updates.push((model.feature_index(s, a, s2), g));
                grad_bias += g;
            }
            for (idx, g) in grad_updates {
                model.weights[idx] -= lr * (g + cfg.l2 * model.weights[idx]);
            }
            model.bias -= lr * grad_bias / scale;
        }
        if epoch >= avg_from {
            for (acc, w) in avg_weights.iter_mut().zip(&model.weights) {
                *acc += w;
            }
            avg_bias += model.bias;
            avg_count += 1;
        }
    }
    if avg_count > 0 {
        for (w, acc) in model.weights.iter_mut().zip(&avg_weights) {
            *w = acc / avg_count as f64;
        }
        model.bias = avg_bias / avg_count as f64;
    }
    let last_loss = bce_loss(&model, samples, class_weight, cfg.l2);
    if !last_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            last_loss: first_loss,
        });
    }
    // the zero model can already be the optimum (identical classes), so
    // mini-batch noise around the starting loss is not divergence
    if cfg.epochs > 0 && last_loss > first_loss + 1e-3 * (1.0 + first_loss.abs()) {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            last_loss,
        });
    }
    Ok(model)
}

/// Bayes-optimal classifier pair from known dynamics and a shared
/// state-action visitation, under equal class priors.
pub fn bayes_classifier_oracle(
    source: &TabularMdp,
    target: &TabularMdp,
    visitation: &ndarray::Array2<f64>,
) -> Result<(LogisticModel, LogisticModel)> {
    bayes_classifier_oracle_with(source, target, visitation, visitation)
}

/// Bayes pair with distinct per-domain visitations d_target, d_source.
/// SAS logit: log[p_tgt(s'|s,a) d_tgt(s,a)] - log[p_src(s'|s,a) d_src(s,a)];
/// SA logit: log d_tgt(s,a) - log d_src(s,a). Zero-probability entries
/// clamp at +-log((1-e)/e).
pub fn bayes_classifier_oracle_with(
    source: &TabularMdp,
    target: &TabularMdp,
    visitation_target: &ndarray::Array2<f64>,
    visitation_source: &ndarray::Array2<f64>,
) -> Result<(LogisticModel, LogisticModel)> {
    if !source.same_shape(target) {
        return Err(Error::ShapeMismatch(
            "source and target MDPs have different shapes".into(),
        ));
    }
    let (s_n, a_n) = (target.num_states(), target.num_actions());
    for vis in [visitation_target, visitation_source] {
        if vis.dim() != (s_n, a_n) {
            return Err(Error::ShapeMismatch(
                "visitation table shape does not match the MDPs".into(),
            ));
        }
        let sum: f64 = vis.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "visitation sums to {sum}, expected 1"
            )));
        }
    }
    let b = logit_bound();
    let safe_ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let mut sas = LogisticModel::zeros(FeatureKind::Sas, s_n, a_n);
    let mut sa = LogisticModel::zeros(FeatureKind::Sa, s_n, a_n);
    for s in 0..s_n {
        for a in 0..a_n {
            let dt = visitation_target[[s, a]];
            let ds = visitation_source[[s, a]];
            let sa_idx = sa.feature_index(s, a, 0);
            sa.weights[sa_idx] = (safe_ln(dt) - safe_ln(ds)).clamp(-b, b);
            for s2 in 0..s_n {
                let pt = target.transition()[[s, a, s2]] * dt;
                let ps = source.transition()[[s, a, s2]] * ds;
                let sas_idx = sas.feature_index(s, a, s2);
                sas.weights[sas_idx] = (safe_ln(pt) - safe_ln(ps)).clamp(-b, b);
            }
        }
    }
    Ok((sas, sa))
}

/// Reward-correction table Delta r(s, a, s') with its clamp bound and the
/// support mask used to tally lookups of never-seen transitions.
#[derive(Debug, Clone)]
pub struct DeltaRTable {
    pub values: Array3<f64>,
    pub clamp_bound: f64,
    /// true where the transition is supported in at least one domain
    pub supported: Array3<bool>,
}

impl DeltaRTable {
    pub fn get(&self, s: usize, a: usize, s_next: usize) -> (f64, bool) {
        (self.values[[s, a, s_next]], self.supported[[s, a, s_next]])
    }
}

/// Delta r(s,a,s') = logit_sas(s,a,s') - logit_sa(s,a), clamped to
/// [-clamp, clamp]. Entries unsupported in both domains are zero by
/// convention; support comes from `support` when given (true dynamics or
/// data counts), otherwise everything is treated as supported.
pub fn delta_r(
    sas: &LogisticModel,
    sa: &LogisticModel,
    clamp: f64,
    support: Option<&Array3<bool>>,
) -> Result<DeltaRTable> {
    if sas.num_states != sa.num_states || sas.num_actions != sa.num_actions {
        return Err(Error::ShapeMismatch(
            "classifier pair has inconsistent feature vocabulary".into(),
        ));
    }
    if clamp < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "clamp bound must be nonnegative, got {clamp}"
        )));
    }
    let (s_n, a_n) = (sas.num_states, sas.num_actions);
    let mut values = Array3::<f64>::zeros((s_n, a_n, s_n));
    let mut supported = Array3::<bool>::from_elem((s_n, a_n, s_n), true);
    for s in 0..s_n {
        for a in 0..a_n {
            let base = sa.logit(s, a, 0);
            for s2 in 0..s_n {
                let sup = support.map_or(true, |m| m[[s, a, s2]]);
                supported[[s, a, s2]] = sup;
                values[[s, a, s2]] = if sup {
                    (sas.logit(s, a, s2) - base).clamp(-clamp, clamp)
                } else {
                    0.0
                };
            }
        }
    }
    Ok(DeltaRTable {
        values,
        clamp_bound: clamp,
        supported,
    })
}

/// Support mask from two MDPs: transitions possible in either domain.
pub fn dynamics_support(source: &TabularMdp, target: &TabularMdp) -> Array3<bool> {
    let (s_n, a_n) = (target.num_states(), target.num_actions());
    Array3::from_shape_fn((s_n, a_n, s_n), |(s, a, s2)| {
        source.transition()[[s, a, s2]] > 0.0 || target.transition()[[s, a, s2]] > 0.0
    })
}

/// Support mask from observed transitions in two datasets.
pub fn data_support(
    source_ds: &Dataset,
    target_ds: &Dataset,
    num_states: usize,
    num_actions: usize,
) -> Array3<bool> {
    let mut mask = Array3::from_elem((num_states, num_actions, num_states), false);
    for ds in [source_ds, target_ds] {
        for traj in ds.trajectories() {
            for t in 0..traj.horizon().saturating_sub(1) {
                let (s, a, _) = traj.steps[t];
                let (s2, _, _) = traj.steps[t + 1];
                mask[[s, a, s2]] = true;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect_tagged, DomainTag};
    use crate::envs;
    use crate::mdp::StationaryPolicy;
    use crate::shift::{apply_shift, ShiftKind, ShiftSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};

    fn two_state_pair(p_t: f64, p_s: f64) -> (TabularMdp, TabularMdp) {
        let mk = |p: f64| {
            let mut t = ndarray::Array3::<f64>::zeros((2, 1, 2));
            t[[0, 0, 1]] = p;
            t[[0, 0, 0]] = 1.0 - p;
            t[[1, 0, 0]] = p;
            t[[1, 0, 1]] = 1.0 - p;
            TabularMdp::new(
                3,
                t,
                Array2::zeros((2, 1)),
                Array1::from_vec(vec![1.0, 0.0]),
                1.0,
            )
            .unwrap()
        };
        (mk(p_s), mk(p_t))
    }

    #[test]
    fn bayes_identical_dynamics_all_zero() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let vis = Array2::from_elem((5, 2), 0.1);
        let (sas, sa) = bayes_classifier_oracle(&mdp, &mdp, &vis).unwrap();
        assert_eq!(sas.max_abs_logit(), 0.0);
        assert_eq!(sa.max_abs_logit(), 0.0);
    }

    #[test]
    fn bayes_two_state_log_odds() {
        let (source, target) = two_state_pair(0.9, 0.7);
        let vis = Array2::from_elem((2, 1), 0.5);
        let (sas, sa) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        let diff = sas.logit(0, 0, 1) - sa.logit(0, 0, 0);
        // direct arithmetic oracle: ln(0.9 / 0.7)
        assert_abs_diff_eq!(diff, 0.251314, epsilon = 1e-6);
        assert_abs_diff_eq!(diff, (0.9f64 / 0.7).ln(), epsilon = 1e-12);
    }

    #[test]
    fn bayes_disjoint_support_clamps() {
        let (source, target) = two_state_pair(0.9, 0.7);
        // source forbids the 0 -> 1 transition
        let mut t = source.transition().clone();
        t[[0, 0, 1]] = 0.0;
        t[[0, 0, 0]] = 1.0;
        let source = TabularMdp::new(
            3,
            t,
            source.reward().clone(),
            source.initial_dist().clone(),
            1.0,
        )
        .unwrap();
        let vis = Array2::from_elem((2, 1), 0.5);
        let (sas, _) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        assert_abs_diff_eq!(sas.logit(0, 0, 1), logit_bound(), epsilon = 1e-12);
    }

    #[test]
    fn delta_r_bayes_recovers_log_dynamics_ratio() {
        let target = envs::chain_walk(5, 5, 0.9).unwrap();
        let source = apply_shift(
            &target,
            &ShiftSpec {
                kind: ShiftKind::TransitionPerturb,
                magnitude: 0.5,
                seed: 7,
            },
        )
        .unwrap();
        let vis = Array2::from_elem((5, 2), 0.1);
        let (sas, sa) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        let support = dynamics_support(&source, &target);
        let dr = delta_r(&sas, &sa, 10.0, Some(&support)).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                for s2 in 0..5 {
                    let pt = target.transition()[[s, a, s2]];
                    let ps = source.transition()[[s, a, s2]];
                    if pt > 0.0 && ps > 0.0 {
                        let expected = (pt / ps).ln().clamp(-10.0, 10.0);
                        assert_abs_diff_eq!(dr.values[[s, a, s2]], expected, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn delta_r_zero_clamp_gives_zero_table() {
        let (source, target) = two_state_pair(0.9, 0.7);
        let vis = Array2::from_elem((2, 1), 0.5);
        let (sas, sa) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        let dr = delta_r(&sas, &sa, 0.0, None).unwrap();
        assert!(dr.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_r_invariant_under_shared_bias_shift() {
        let (source, target) = two_state_pair(0.9, 0.7);
        let vis = Array2::from_elem((2, 1), 0.5);
        let (mut sas, mut sa) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        let base = delta_r(&sas, &sa, 10.0, None).unwrap();
        sas.bias += 0.37;
        sa.bias += 0.37;
        let shifted = delta_r(&sas, &sa, 10.0, None).unwrap();
        for (a, b) in base.values.iter().zip(shifted.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mdp = envs::chain_walk(4, 4, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let src = collect_tagged(&mdp, &beta, 30, 1, DomainTag::Source, "uniform").unwrap();
        let tgt = collect_tagged(&mdp, &beta, 30, 2, DomainTag::Target, "uniform").unwrap();
        let mut samples = transitions_of(&src, 0);
        samples.extend(transitions_of(&tgt, 1));
        let cw = [1.0, 1.0];
        let l2 = 1e-3;

        let mut model = LogisticModel::zeros(FeatureKind::Sas, 4, 2);
        let mut r = rng::stream(5, &[77]);
        use rand::Rng;
        for w in &mut model.weights {
            *w = r.random_range(-1.0..1.0);
        }
        model.bias = r.random_range(-0.5..0.5);

        let grad = bce_grad(&model, &samples, cw, l2);
        let h = 1e-5;
        let dim = model.weights.len();
        for trial in 0..10 {
            let idx = r.random_range(0..dim + 1);
            let mut plus = model.clone();
            let mut minus = model.clone();
            if idx < dim {
                plus.weights[idx] += h;
                minus.weights[idx] -= h;
            } else {
                plus.bias += h;
                minus.bias -= h;
            }
            let num = (bce_loss(&plus, &samples, cw, l2) - bce_loss(&minus, &samples, cw, l2))
                / (2.0 * h);
            let denom = num.abs().max(grad[idx].abs()).max(1e-12);
            assert!(
                (num - grad[idx]).abs() / denom < 1e-6,
                "trial {trial}: analytic {} vs numeric {num}",
                grad[idx]
            );
        }
    }

    #[test]
    fn identical_datasets_train_to_near_half() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let src = collect_tagged(&mdp, &beta, 400, 3, DomainTag::Source, "uniform").unwrap();
        let mut tgt = src.clone();
        for traj in tgt.trajectories_mut() {
            traj.domain_tag = DomainTag::Target;
        }
        let cfg = TrainConfig {
            l2: 1e-3,
            ..TrainConfig::default()
        };
        let (sas, sa) = train_classifiers(&src, &tgt, &cfg).unwrap();
        assert!(sas.max_abs_logit() <= 0.1, "sas logits {}", sas.max_abs_logit());
        assert!(sa.max_abs_logit() <= 0.1, "sa logits {}", sa.max_abs_logit());
    }

    #[test]
    fn trained_log_odds_close_to_bayes() {
        // The comparison target uses true dynamics with the empirical
        // state-action marginals, so the remaining error is conditional
        // next-state sampling noise.
        let target = envs::chain_walk_uniform_start(5, 5, 0.9).unwrap();
        let source = apply_shift(
            &target,
            &ShiftSpec {
                kind: ShiftKind::TransitionPerturb,
                magnitude: 0.5,
                seed: 7,
            },
        )
        .unwrap();
        let beta = StationaryPolicy::uniform(&target);
        // 10^4 transitions each: 2500 trajectories x 4 transitions
        let src_ds =
            collect_tagged(&source, &beta, 2500, 41, DomainTag::Source, "uniform").unwrap();
        let tgt_ds =
            collect_tagged(&target, &beta, 2500, 42, DomainTag::Target, "uniform").unwrap();
        let cfg = TrainConfig {
            epochs: 1500,
            lr: 1.0,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let (sas, sa) = train_classifiers(&src_ds, &tgt_ds, &cfg).unwrap();

        // empirical (s,a) marginals per class
        let count = |ds: &Dataset| {
            let mut c = Array2::<f64>::zeros((5, 2));
            for traj in ds.trajectories() {
                for t in 0..traj.horizon() - 1 {
                    let (s, a, _) = traj.steps[t];
                    c[[s, a]] += 1.0;
                }
            }
            let total = c.sum();
            c / total
        };
        let d_src = count(&src_ds);
        let d_tgt = count(&tgt_ds);
        let (bayes_sas, bayes_sa) =
            bayes_classifier_oracle_with(&source, &target, &d_tgt, &d_src).unwrap();

        let support = data_support(&src_ds, &tgt_ds, 5, 2);
        let trained = delta_r(&sas, &sa, 20.0, Some(&support)).unwrap();
        let bayes = delta_r(&bayes_sas, &bayes_sa, 20.0, Some(&support)).unwrap();

        // per-triple transition counts, for the sampling-noise bound
        let count3 = |ds: &Dataset| {
            let mut c = Array3::<f64>::zeros((5, 2, 5));
            for traj in ds.trajectories() {
                for t in 0..traj.horizon() - 1 {
                    let (s, a, _) = traj.steps[t];
                    let (s2, _, _) = traj.steps[t + 1];
                    c[[s, a, s2]] += 1.0;
                }
            }
            c
        };
        let c_src = count3(&src_ds);
        let c_tgt = count3(&tgt_ds);
        let sa_totals = |c: &Array3<f64>, s: usize, a: usize| -> f64 {
            (0..5).map(|s2| c[[s, a, s2]]).sum()
        };

        // the estimate is the empirical conditional log-ratio, whose noise
        // per triple is sigma^2 = (1-p_t)/c_t + (1-p_s)/c_s; assert the
        // 0.1 claim wherever 3 sigma fits inside it, and the 3-sigma
        // statistical bound (plus optimizer residual) everywhere else
        let mut tight_cells = 0;
        for s in 0..5 {
            for a in 0..2 {
                for s2 in 0..5 {
                    if source.transition()[[s, a, s2]] == 0.0
                        || target.transition()[[s, a, s2]] == 0.0
                    {
                        continue;
                    }
                    let (ct, cs) = (c_tgt[[s, a, s2]], c_src[[s, a, s2]]);
                    if ct < 1.0 || cs < 1.0 {
                        continue;
                    }
                    let pt_hat = ct / sa_totals(&c_tgt, s, a);
                    let ps_hat = cs / sa_totals(&c_src, s, a);
                    let sigma = ((1.0 - pt_hat) / ct + (1.0 - ps_hat) / cs).sqrt();
                    let err = (trained.values[[s, a, s2]] - bayes.values[[s, a, s2]]).abs();
                    assert!(
                        err <= 3.0 * sigma + 0.05,
                        "(s={s},a={a},s2={s2}) err {err} vs 3sigma {}",
                        3.0 * sigma
                    );
                    if 3.0 * sigma <= 0.1 {
                        tight_cells += 1;
                        assert!(err <= 0.1, "(s={s},a={a},s2={s2}) err {err} > 0.1");
                    }
                }
            }
        }
        assert!(tight_cells >= 2, "no cells with enough data for the 0.1 bound");
    }

    #[test]
    fn single_transition_datasets_run() {
        let mdp = envs::chain_walk(3, 2, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let src = collect_tagged(&mdp, &beta, 1, 1, DomainTag::Source, "uniform").unwrap();
        let tgt = collect_tagged(&mdp, &beta, 1, 2, DomainTag::Target, "uniform").unwrap();
        let (sas, sa) = train_classifiers(&src, &tgt, &TrainConfig::default()).unwrap();
        assert!(sas.weights.iter().all(|w| w.is_finite()));
        assert!(sa.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn model_json_round_trip() {
        let (source, target) = two_state_pair(0.9, 0.7);
        let vis = Array2::from_elem((2, 1), 0.5);
        let (sas, _) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
        let text = serde_json::to_string(&sas).unwrap();
        let back: LogisticModel = serde_json::from_str(&text).unwrap();
        assert_eq!(sas, back);
    }
}
