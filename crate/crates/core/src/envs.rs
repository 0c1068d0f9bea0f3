//! Builtin environments and behavior policies.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{value_iteration, StationaryPolicy, TabularMdp};
use crate::rng;

/// Chain of `n` states with actions left (0) and right (1). A move
/// succeeds with probability `success_prob` and otherwise stays in
/// place; the ends clamp. Reward 1 for every step spent in the last
/// state, 0 elsewhere; start in state 0; reward grid 1.
pub fn chain_walk(num_states: usize, horizon: usize, success_prob: f64) -> Result<TabularMdp> {
    if num_states < 2 {
        return Err(Error::InvalidArgument(
            "chain_walk needs at least 2 states".into(),
        ));
    }
    if !(0.0..=1.0).contains(&success_prob) {
        return Err(Error::InvalidArgument(format!(
            "success_prob must lie in [0, 1], got {success_prob}"
        )));
    }
    let s = num_states;
    let mut transition = Array3::<f64>::zeros((s, 2, s));
    for si in 0..s {
        let left = si.saturating_sub(1);
        let right = (si + 1).min(s - 1);
        transition[[si, 0, left]] += success_prob;
        transition[[si, 0, si]] += 1.0 - success_prob;
        transition[[si, 1, right]] += success_prob;
        transition[[si, 1, si]] += 1.0 - success_prob;
    }
    let mut reward = Array2::<f64>::zeros((s, 2));
    for a in 0..2 {
        reward[[s - 1, a]] = 1.0;
    }
    let mut initial = Array1::<f64>::zeros(s);
    initial[0] = 1.0;
    TabularMdp::new(horizon, transition, reward, initial, 1.0)
}

/// Chain walk variant whose episodes start uniformly over states; useful
/// when every state-action pair needs comparable visitation.
pub fn chain_walk_uniform_start(
    num_states: usize,
    horizon: usize,
    success_prob: f64,
) -> Result<TabularMdp> {
    let base = chain_walk(num_states, horizon, success_prob)?;
    TabularMdp::new(
        base.horizon(),
        base.transition().clone(),
        base.reward().clone(),
        Array1::from_elem(num_states, 1.0 / num_states as f64),
        base.reward_grid(),
    )
}

/// Seeded random MDP. Transition rows are normalized positive draws,
/// rewards are uniform integer levels in `0..=reward_levels` times
/// `reward_grid`, and the initial distribution is a normalized draw.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
    reward_levels: i64,
    reward_grid: f64,
) -> Result<TabularMdp> {
    let mut r = rng::stream(seed, &[rng::labels::SHIFT, 0xE17]);
    let mut transition = Array3::<f64>::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            let mut row: Vec<f64> = (0..num_states).map(|_| r.random::<f64>() + 0.05).collect();
            let sum: f64 = row.iter().sum();
            for v in &mut row {
                *v /= sum;
            }
            // renormalize exactly against accumulated rounding
            let sum2: f64 = row.iter().sum();
            let last = num_states - 1;
            row[last] += 1.0 - sum2;
            for (sj, v) in row.iter().enumerate() {
                transition[[s, a, sj]] = *v;
            }
        }
    }
    let mut reward = Array2::<f64>::zeros((num_states, num_actions));
    for s in 0..num_states {
        for a in 0..num_actions {
            let level = r.random_range(0..=reward_levels.max(0)) as f64;
            reward[[s, a]] = level * reward_grid;
        }
    }
    let mut initial: Vec<f64> = (0..num_states).map(|_| r.random::<f64>() + 0.05).collect();
    let sum: f64 = initial.iter().sum();
    for v in &mut initial {
        *v /= sum;
    }
    let sum2: f64 = initial.iter().sum();
    initial[num_states - 1] += 1.0 - sum2;
    TabularMdp::new(
        horizon,
        transition,
        reward,
        Array1::from_vec(initial),
        reward_grid,
    )
}

/// Behavior policy specifications resolvable against a concrete MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorSpec {
    Uniform,
    /// Optimal policy of the given MDP mixed with uniform exploration.
    EpsilonGreedy { epsilon: f64 },
}

impl BehaviorSpec {
    pub fn id(&self) -> String {
        match self {
            BehaviorSpec::Uniform => "uniform".into(),
            BehaviorSpec::EpsilonGreedy { epsilon } => format!("eps_greedy_{epsilon}"),
        }
    }

    pub fn resolve(&self, mdp: &TabularMdp) -> Result<StationaryPolicy> {
        match self {
            BehaviorSpec::Uniform => Ok(StationaryPolicy::uniform(mdp)),
            BehaviorSpec::EpsilonGreedy { epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(Error::InvalidArgument(format!(
                        "epsilon must lie in [0, 1], got {epsilon}"
                    )));
                }
                let (pi_star, _) = value_iteration(mdp);
                Ok(pi_star.epsilon_greedy(*epsilon))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_walk_rows_are_stochastic() {
        let mdp = chain_walk(5, 5, 0.9).unwrap();
        assert_eq!(mdp.num_states(), 5);
        assert_eq!(mdp.num_actions(), 2);
        // boundary clamp: right from last state stays put
        assert_eq!(mdp.transition()[[4, 1, 4]], 1.0);
        assert_eq!(mdp.reward()[[4, 0]], 1.0);
    }

    #[test]
    fn random_mdp_is_seed_deterministic() {
        let a = random_mdp(4, 3, 5, 42, 3, 0.5).unwrap();
        let b = random_mdp(4, 3, 5, 42, 3, 0.5).unwrap();
        assert_eq!(a, b);
        let c = random_mdp(4, 3, 5, 43, 3, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn epsilon_greedy_mixes_toward_uniform() {
        let mdp = chain_walk(5, 5, 0.9).unwrap();
        let pol = BehaviorSpec::EpsilonGreedy { epsilon: 0.4 }
            .resolve(&mdp)
            .unwrap();
        for t in 0..5 {
            for s in 0..5 {
                let row = pol.action_probs(t, s);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.2 - 1e-12));
            }
        }
    }
}
