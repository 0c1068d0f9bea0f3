//! Construction of source MDPs from a target MDP by parameterized
//! dynamics shifts. The reward table, initial distribution and shapes are
//! preserved bit-exactly; only the transition tensor changes.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Mix every row with a seeded random row: p_src = (1-m) p_tgt + m q.
    TransitionPerturb,
    /// With probability m the executed action is replaced by a uniformly
    /// random one.
    ActionNoise,
    /// A designated action behaves as a no-op (stay in place) w.p. m.
    ActionRestrict,
    /// Probability mass entering a designated state is redirected to a
    /// neighbor with fraction m. At m = 1 the designated state loses all
    /// incoming support, which is exactly the regime where log-ratio
    /// corrections blow up.
    StateMerge,
}

impl ShiftKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "transition_perturb" => Ok(Self::TransitionPerturb),
            "action_noise" => Ok(Self::ActionNoise),
            "action_restrict" => Ok(Self::ActionRestrict),
            "state_merge" => Ok(Self::StateMerge),
            "none" | "identity" => Ok(Self::TransitionPerturb), // magnitude 0 gives identity
            other => Err(Error::InvalidArgument(format!(
                "unknown shift kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub magnitude: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.magnitude) {
            return Err(Error::InvalidArgument(format!(
                "shift magnitude must lie in [0, 1], got {}",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Apply a dynamics shift to a target MDP, producing the source MDP.
/// Deterministic in (target, spec).
pub fn apply_shift(target: &TabularMdp, spec: &ShiftSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let (s_n, a_n) = (target.num_states(), target.num_actions());
    let m = spec.magnitude;
    let mut transition = target.transition().clone();
    if m > 0.0 {
        match spec.kind {
            ShiftKind::TransitionPerturb => {
                for s in 0..s_n {
                    for a in 0..a_n {
                        let mut r = rng::stream(
                            spec.seed,
                            &[rng::labels::SHIFT, s as u64, a as u64],
                        );
                        let mut q: Vec<f64> = (0..s_n).map(|_| r.random::<f64>() + 0.01).collect();
                        let sum: f64 = q.iter().sum();
                        for v in &mut q {
                            *v /= sum;
                        }
                        let correction = 1.0 - q.iter().sum::<f64>();
                        q[s_n - 1] += correction;
                        for sj in 0..s_n {
                            transition[[s, a, sj]] =
                                (1.0 - m) * target.transition()[[s, a, sj]] + m * q[sj];
                        }
                        renormalize_row(&mut transition, s, a, s_n);
                    }
                }
            }
            ShiftKind::ActionNoise => {
                let t0 = target.transition();
                for s in 0..s_n {
                    // action-uniform mixture row for this state
                    let mut mix = vec![0.0f64; s_n];
                    for a in 0..a_n {
                        for sj in 0..s_n {
                            mix[sj] += t0[[s, a, sj]] / a_n as f64;
                        }
                    }
                    for a in 0..a_n {
                        for sj in 0..s_n {
                            transition[[s, a, sj]] = (1.0 - m) * t0[[s, a, sj]] + m * mix[sj];
                        }
                        renormalize_row(&mut transition, s, a, s_n);
                    }
                }
            }
            ShiftKind::ActionRestrict => {
                let restricted = (spec.seed % a_n as u64) as usize;
                for s in 0..s_n {
                    for sj in 0..s_n {
                        let base = target.transition()[[s, restricted, sj]];
                        let noop = if sj == s { 1.0 } else { 0.0 };
                        transition[[s, restricted, sj]] = (1.0 - m) * base + m * noop;
                    }
                    renormalize_row(&mut transition, s, restricted, s_n);
                }
            }
            ShiftKind::StateMerge => {
                let merged = (spec.seed % s_n as u64) as usize;
                let neighbor = if merged + 1 < s_n { merged + 1 } else { merged - 1 };
                for s in 0..s_n {
                    for a in 0..a_n {
                        let into = transition[[s, a, merged]];
                        if into > 0.0 {
                            transition[[s, a, merged]] = (1.0 - m) * into;
                            transition[[s, a, neighbor]] += m * into;
                        }
                    }
                }
            }
        }
    }
    TabularMdp::new(
        target.horizon(),
        transition,
        target.reward().clone(),
        target.initial_dist().clone(),
        target.reward_grid(),
    )
}

/// Float sums drift below the 1e-12 row invariant; push the residual
/// into the largest entry.
fn renormalize_row(t: &mut Array3<f64>, s: usize, a: usize, s_n: usize) {
    let mut sum = 0.0;
    let mut argmax = 0;
    let mut max = -1.0;
    for sj in 0..s_n {
        let v = t[[s, a, sj]];
        sum += v;
        if v > max {
            max = v;
            argmax = sj;
        }
    }
    t[[s, a, argmax]] += 1.0 - sum;
}

/// Per-(s, a) diagnostics of how far two dynamics are apart.
#[derive(Debug, Clone)]
pub struct DynamicsGap {
    /// total-variation distance between the transition rows
    pub tv: ndarray::Array2<f64>,
    /// max |log p_tgt / p_src| over next-states supported by both; +inf
    /// sentinel when the supports differ
    pub max_log_ratio: ndarray::Array2<f64>,
}

pub fn dynamics_gap(source: &TabularMdp, target: &TabularMdp) -> Result<DynamicsGap> {
    if !source.same_shape(target) {
        return Err(Error::ShapeMismatch(
            "source and target MDPs have different shapes".into(),
        ));
    }
    let (s_n, a_n) = (target.num_states(), target.num_actions());
    let mut tv = ndarray::Array2::<f64>::zeros((s_n, a_n));
    let mut mlr = ndarray::Array2::<f64>::zeros((s_n, a_n));
    for s in 0..s_n {
        for a in 0..a_n {
            let mut dist = 0.0;
            let mut worst = 0.0f64;
            let mut mismatch = false;
            for sj in 0..s_n {
                let ps = source.transition()[[s, a, sj]];
                let pt = target.transition()[[s, a, sj]];
                dist += (ps - pt).abs();
                match (ps > 0.0, pt > 0.0) {
                    (true, true) => worst = worst.max((pt / ps).ln().abs()),
                    (false, false) => {}
                    _ => mismatch = true,
                }
            }
            tv[[s, a]] = 0.5 * dist;
            mlr[[s, a]] = if mismatch { f64::INFINITY } else { worst };
        }
    }
    Ok(DynamicsGap { tv, max_log_ratio: mlr })
}
