//! Finite-horizon tabular MDPs and the exact dynamic-programming solvers
//! (optimal value, return-to-go distributions, policy evaluation) used as
//! ground-truth oracles by the rest of the crate.
//!
//! Rewards live on an exact discrete grid: every reward is an integer
//! multiple of `reward_grid`. Returns and returns-to-go therefore also lie
//! on the grid, which lets return distributions be represented exactly as
//! atoms at integer grid offsets and makes CDF inversion exact.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const GRID_SNAP_TOL: f64 = 1e-9;

/// Finite-horizon MDP: `transition[s][a][s']`, `reward[s][a]`,
/// `initial_dist[s]`, episode length `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transition: Array3<f64>,
    reward: Array2<f64>,
    initial_dist: Array1<f64>,
    reward_grid: f64,
    /// reward[s][a] = reward_offsets[s][a] * reward_grid, exactly.
    reward_offsets: Array2<i64>,
}

impl TabularMdp {
    pub fn new(
        horizon: usize,
        transition: Array3<f64>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        reward_grid: f64,
    ) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s == 0 || a == 0 || horizon == 0 {
            return Err(Error::InvalidArgument(
                "num_states, num_actions and horizon must be positive".into(),
            ));
        }
        if s2 != s {
            return Err(Error::ShapeMismatch(format!(
                "transition tensor is [{s}][{a}][{s2}], expected [{s}][{a}][{s}]"
            )));
        }
        if reward.dim() != (s, a) {
            return Err(Error::ShapeMismatch(format!(
                "reward table is {:?}, expected ({s}, {a})",
                reward.dim()
            )));
        }
        if initial_dist.len() != s {
            return Err(Error::ShapeMismatch(format!(
                "initial_dist has length {}, expected {s}",
                initial_dist.len()
            )));
        }
        if !(reward_grid > 0.0) || !reward_grid.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "reward_grid must be positive and finite, got {reward_grid}"
            )));
        }
        for si in 0..s {
            for ai in 0..a {
                let row = transition.slice(ndarray::s![si, ai, ..]);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "transition row (s={si}, a={ai}) sums to {sum}, expected 1"
                    )));
                }
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::InvalidArgument(format!(
                        "transition row (s={si}, a={ai}) has entries outside [0, 1]"
                    )));
                }
            }
        }
        let init_sum: f64 = initial_dist.sum();
        if (init_sum - 1.0).abs() > ROW_SUM_TOL
            || initial_dist.iter().any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::InvalidArgument(format!(
                "initial_dist must be a probability vector, sums to {init_sum}"
            )));
        }
        let mut reward_offsets = Array2::<i64>::zeros((s, a));
        for si in 0..s {
            for ai in 0..a {
                let r = reward[[si, ai]];
                if !r.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "reward (s={si}, a={ai}) is not finite"
                    )));
                }
                let k = (r / reward_grid).round();
                if (k * reward_grid - r).abs() > GRID_SNAP_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "reward (s={si}, a={ai}) = {r} is not a multiple of reward_grid {reward_grid}"
                    )));
                }
                reward_offsets[[si, ai]] = k as i64;
            }
        }
        Ok(Self {
            num_states: s,
            num_actions: a,
            horizon,
            transition,
            reward,
            initial_dist,
            reward_grid,
            reward_offsets,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }
    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }
    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }
    pub fn reward_grid(&self) -> f64 {
        self.reward_grid
    }
    /// Integer grid offset of reward[s][a].
    pub fn reward_offset(&self, s: usize, a: usize) -> i64 {
        self.reward_offsets[[s, a]]
    }

    /// Snap a return value to its integer grid offset. Errors if the value
    /// is farther than a tenth of a grid step from the lattice.
    pub fn grid_offset(&self, g: f64) -> Result<i64> {
        let k = (g / self.reward_grid).round();
        if (k * self.reward_grid - g).abs() > self.reward_grid * 0.1 {
            return Err(Error::InvalidArgument(format!(
                "value {g} is off the return grid (step {})",
                self.reward_grid
            )));
        }
        Ok(k as i64)
    }

    /// Same shapes (states, actions, horizon)?
    pub fn same_shape(&self, other: &TabularMdp) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.horizon == other.horizon
    }

    /// Versioned JSON document. Probabilities round-trip losslessly.
    pub fn to_json(&self) -> String {
        let doc = MdpDoc {
            version: MDP_FORMAT_VERSION,
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            reward_grid: self.reward_grid,
            transition: (0..self.num_states)
                .map(|s| {
                    (0..self.num_actions)
                        .map(|a| self.transition.slice(ndarray::s![s, a, ..]).to_vec())
                        .collect()
                })
                .collect(),
            reward: (0..self.num_states)
                .map(|s| self.reward.row(s).to_vec())
                .collect(),
            initial_dist: self.initial_dist.to_vec(),
        };
        serde_json::to_string(&doc).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDoc = serde_json::from_str(text)?;
        if doc.version != MDP_FORMAT_VERSION {
            return Err(Error::MalformedFile {
                path: "<mdp json>".into(),
                reason: format!(
                    "unsupported format version {} (tool reads {MDP_FORMAT_VERSION})",
                    doc.version
                ),
            });
        }
        let s = doc.num_states;
        let a = doc.num_actions;
        let mut transition = Array3::<f64>::zeros((s, a, s));
        for (si, per_a) in doc.transition.iter().enumerate() {
            for (ai, row) in per_a.iter().enumerate() {
                for (sj, &p) in row.iter().enumerate() {
                    transition[[si, ai, sj]] = p;
                }
            }
        }
        let mut reward = Array2::<f64>::zeros((s, a));
        for (si, row) in doc.reward.iter().enumerate() {
            for (ai, &r) in row.iter().enumerate() {
                reward[[si, ai]] = r;
            }
        }
        Self::new(
            doc.horizon,
            transition,
            reward,
            Array1::from_vec(doc.initial_dist),
            doc.reward_grid,
        )
    }

    /// 64-bit FNV-1a of the serialized document, 16 hex chars.
    pub fn fingerprint(&self) -> String {
        fnv1a64_hex(self.to_json().as_bytes())
    }
}

pub const MDP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MdpDoc {
    version: u32,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    reward_grid: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    initial_dist: Vec<f64>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}

pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Time-indexed stochastic policy: `probs[t][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>, // flattened [t][s][a]
}

impl StationaryPolicy {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                horizon * num_states * num_actions
            )));
        }
        let pol = Self {
            horizon,
            num_states,
            num_actions,
            probs,
        };
        for t in 0..horizon {
            for s in 0..num_states {
                let row = pol.action_probs(t, s);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "policy row (t={t}, s={s}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(pol)
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        Self {
            horizon: h,
            num_states: s,
            num_actions: a,
            probs: vec![1.0 / a as f64; h * s * a],
        }
    }

    /// Deterministic policy from an action table `actions[t][s]`.
    pub fn deterministic(horizon: usize, num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for t in 0..horizon {
            for s in 0..num_states {
                probs[(t * num_states + s) * num_actions + actions[t * num_states + s]] = 1.0;
            }
        }
        Self {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[(t * self.num_states + s) * self.num_actions + a]
    }

    pub fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        let base = (t * self.num_states + s) * self.num_actions;
        &self.probs[base..base + self.num_actions]
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.horizon == mdp.horizon()
            && self.num_states == mdp.num_states()
            && self.num_actions == mdp.num_actions()
    }

    /// Mix with the uniform policy: with probability `epsilon` act uniformly.
    pub fn epsilon_greedy(&self, epsilon: f64) -> Self {
        let u = epsilon / self.num_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|&p| (1.0 - epsilon) * p + u)
            .collect();
        Self {
            horizon: self.horizon,
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs,
        }
    }
}

/// Distribution of a return-to-go, atoms at integer multiples of `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution {
    grid: f64,
    /// strictly increasing grid offsets
    offsets: Vec<i64>,
    mass: Vec<f64>,
    /// (timestep, state, action) this distribution conditions on
    conditioning: (usize, usize, usize),
}

impl ReturnDistribution {
    fn from_map(map: BTreeMap<i64, f64>, grid: f64, conditioning: (usize, usize, usize)) -> Self {
        let mut offsets = Vec::with_capacity(map.len());
        let mut mass = Vec::with_capacity(map.len());
        for (k, m) in map {
            if m > 0.0 {
                offsets.push(k);
                mass.push(m);
            }
        }
        Self {
            grid,
            offsets,
            mass,
            conditioning,
        }
    }

    pub fn grid(&self) -> f64 {
        self.grid
    }
    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn conditioning(&self) -> (usize, usize, usize) {
        self.conditioning
    }

    pub fn support(&self) -> Vec<f64> {
        self.offsets.iter().map(|&k| k as f64 * self.grid).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.offsets
            .iter()
            .zip(&self.mass)
            .map(|(&k, &m)| k as f64 * self.grid * m)
            .sum()
    }

    pub fn std(&self) -> f64 {
        let mu = self.mean();
        let var: f64 = self
            .offsets
            .iter()
            .zip(&self.mass)
            .map(|(&k, &m)| {
                let d = k as f64 * self.grid - mu;
                m * d * d
            })
            .sum();
        var.max(0.0).sqrt()
    }

    /// Probability of the atom at grid offset `k` (0 if absent).
    pub fn pmf_at(&self, k: i64) -> f64 {
        match self.offsets.binary_search(&k) {
            Ok(i) => self.mass[i],
            Err(_) => 0.0,
        }
    }

    /// Cumulative mass strictly below offset `k` and at `k`.
    pub fn cdf_parts(&self, k: i64) -> (f64, f64) {
        let mut below = 0.0;
        for (i, &o) in self.offsets.iter().enumerate() {
            if o < k {
                below += self.mass[i];
            } else if o == k {
                return (below, self.mass[i]);
            } else {
                break;
            }
        }
        (below, 0.0)
    }

    /// Generalized inverse CDF: smallest support offset whose cumulative
    /// mass reaches `u`.
    pub fn quantile_offset(&self, u: f64) -> i64 {
        let mut acc = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            acc += m;
            if u <= acc {
                return self.offsets[i];
            }
        }
        *self.offsets.last().expect("nonempty distribution")
    }

    /// Build from explicit atoms (used by tests and the CDF pushforward).
    pub fn from_atoms(
        grid: f64,
        atoms: impl IntoIterator<Item = (i64, f64)>,
        conditioning: (usize, usize, usize),
    ) -> Self {
        let mut map = BTreeMap::new();
        for (k, m) in atoms {
            *map.entry(k).or_insert(0.0) += m;
        }
        Self::from_map(map, grid, conditioning)
    }
}

/// Optimal time-dependent deterministic policy and its exact expected
/// return. Argmax ties break toward the lowest action index.
pub fn value_iteration(mdp: &TabularMdp) -> (StationaryPolicy, f64) {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v_next = vec![0.0f64; s];
    let mut actions = vec![0usize; h * s];
    for t in (0..h).rev() {
        let mut v_here = vec![0.0f64; s];
        for si in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for ai in 0..a {
                let mut q = mdp.reward()[[si, ai]];
                for sj in 0..s {
                    let p = mdp.transition()[[si, ai, sj]];
                    if p > 0.0 {
                        q += p * v_next[sj];
                    }
                }
                if q > best {
                    best = q;
                    best_a = ai;
                }
            }
            v_here[si] = best;
            actions[t * s + si] = best_a;
        }
        v_next = v_here;
    }
    let j_star: f64 = (0..s).map(|si| mdp.initial_dist()[si] * v_next[si]).sum();
    (StationaryPolicy::deterministic(h, s, a, &actions), j_star)
}

/// Exact J(pi) by backward induction.
pub fn policy_value(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<f64> {
    if !policy.matches(mdp) {
        return Err(Error::ShapeMismatch(
            "policy shape does not match the MDP".into(),
        ));
    }
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v_next = vec![0.0f64; s];
    for t in (0..h).rev() {
        let mut v_here = vec![0.0f64; s];
        for si in 0..s {
            let mut v = 0.0;
            for ai in 0..a {
                let pa = policy.prob(t, si, ai);
                if pa == 0.0 {
                    continue;
                }
                let mut q = mdp.reward()[[si, ai]];
                for sj in 0..s {
                    let p = mdp.transition()[[si, ai, sj]];
                    if p > 0.0 {
                        q += p * v_next[sj];
                    }
                }
                v += pa * q;
            }
            v_here[si] = v;
        }
        v_next = v_here;
    }
    Ok((0..s).map(|si| mdp.initial_dist()[si] * v_next[si]).sum())
}

/// Exact distributions of the return-to-go sum_{h=t}^{H} r_h given
/// (s_t = s, a_t = a), for every (t, s, a), under `policy` for h > t.
#[derive(Debug, Clone)]
pub struct RtgTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    grid: f64,
    dists: Vec<ReturnDistribution>, // [t][s][a]
}

impl RtgTable {
    pub fn get(&self, t: usize, s: usize, a: usize) -> &ReturnDistribution {
        &self.dists[(t * self.num_states + s) * self.num_actions + a]
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn grid(&self) -> f64 {
        self.grid
    }

    /// Replace the conditional distribution at every (t, s, a); used to
    /// form pushforward occupancies.
    pub fn with_dists(&self, dists: Vec<ReturnDistribution>) -> Self {
        assert_eq!(dists.len(), self.dists.len());
        Self {
            horizon: self.horizon,
            num_states: self.num_states,
            num_actions: self.num_actions,
            grid: self.grid,
            dists,
        }
    }

    pub fn dists(&self) -> &[ReturnDistribution] {
        &self.dists
    }
}

/// Compute the full return-to-go distribution table by backward DP,
/// convolving the one-step reward with the mixture over (s', a').
pub fn rtg_table(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<RtgTable> {
    if !policy.matches(mdp) {
        return Err(Error::ShapeMismatch(
            "policy shape does not match the MDP".into(),
        ));
    }
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut dists: Vec<Option<ReturnDistribution>> = vec![None; h * s * a];
    for t in (0..h).rev() {
        for si in 0..s {
            for ai in 0..a {
                let shift = mdp.reward_offset(si, ai);
                let mut map = BTreeMap::new();
                if t == h - 1 {
                    map.insert(shift, 1.0);
                } else {
                    for sj in 0..s {
                        let p = mdp.transition()[[si, ai, sj]];
                        if p == 0.0 {
                            continue;
                        }
                        for aj in 0..a {
                            let w = p * policy.prob(t + 1, sj, aj);
                            if w == 0.0 {
                                continue;
                            }
                            let next = dists[((t + 1) * s + sj) * a + aj]
                                .as_ref()
                                .expect("filled in later timestep");
                            for (idx, &k) in next.offsets.iter().enumerate() {
                                *map.entry(k + shift).or_insert(0.0) += w * next.mass[idx];
                            }
                        }
                    }
                }
                dists[(t * s + si) * a + ai] = Some(ReturnDistribution::from_map(
                    map,
                    mdp.reward_grid(),
                    (t, si, ai),
                ));
            }
        }
    }
    Ok(RtgTable {
        horizon: h,
        num_states: s,
        num_actions: a,
        grid: mdp.reward_grid(),
        dists: dists.into_iter().map(|d| d.unwrap()).collect(),
    })
}

/// Single-cell accessor matching the backward DP table.
pub fn return_to_go_distribution(
    mdp: &TabularMdp,
    policy: &StationaryPolicy,
    t: usize,
    s: usize,
    a: usize,
) -> Result<ReturnDistribution> {
    if t >= mdp.horizon() {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} out of range (horizon {})",
            mdp.horizon()
        )));
    }
    Ok(rtg_table(mdp, policy)?.get(t, s, a).clone())
}

/// Exact joint law of (s_t, a_t, g_t) under a policy: state-action
/// occupancy from forward DP times the conditional return-to-go law.
#[derive(Debug, Clone)]
pub struct JointOccupancy {
    occ_sa: Array3<f64>, // [t][s][a]
    rtg: RtgTable,
}

impl JointOccupancy {
    pub fn occupancy(&self) -> &Array3<f64> {
        &self.occ_sa
    }
    pub fn rtg(&self) -> &RtgTable {
        &self.rtg
    }
    pub fn horizon(&self) -> usize {
        self.rtg.horizon()
    }
    pub fn grid(&self) -> f64 {
        self.rtg.grid()
    }

    /// P(s_t = s, a_t = a, g_t = k * grid).
    pub fn mass(&self, t: usize, s: usize, a: usize, k: i64) -> f64 {
        self.occ_sa[[t, s, a]] * self.rtg.get(t, s, a).pmf_at(k)
    }

    /// Sum of all entries; one unit of probability per timestep.
    pub fn total_mass(&self) -> f64 {
        let mut sum = 0.0;
        for t in 0..self.rtg.horizon() {
            for s in 0..self.rtg.num_states() {
                for a in 0..self.rtg.num_actions() {
                    sum += self.occ_sa[[t, s, a]] * self.rtg.get(t, s, a).total_mass();
                }
            }
        }
        sum
    }

    /// Conditional action law P(a | s_t = s, g_t = k * grid), or None when
    /// the conditioning event has zero probability.
    pub fn action_given_return(&self, t: usize, s: usize, k: i64) -> Option<Vec<f64>> {
        let a_n = self.rtg.num_actions();
        let mut w = vec![0.0; a_n];
        let mut total = 0.0;
        for a in 0..a_n {
            let m = self.mass(t, s, a, k);
            w[a] = m;
            total += m;
        }
        if total <= 0.0 {
            return None;
        }
        for x in &mut w {
            *x /= total;
        }
        Some(w)
    }

    /// Grid offsets with positive P(g_t = g | s_t = s).
    pub fn covered_returns(&self, t: usize, s: usize) -> Vec<i64> {
        let mut ks: Vec<i64> = Vec::new();
        for a in 0..self.rtg.num_actions() {
            if self.occ_sa[[t, s, a]] > 0.0 {
                ks.extend(self.rtg.get(t, s, a).offsets());
            }
        }
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Swap in alternative conditional return laws (same occupancy).
    pub fn with_rtg(&self, rtg: RtgTable) -> Self {
        Self {
            occ_sa: self.occ_sa.clone(),
            rtg,
        }
    }
}

pub fn joint_occupancy(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<JointOccupancy> {
    if !policy.matches(mdp) {
        return Err(Error::ShapeMismatch(
            "policy shape does not match the MDP".into(),
        ));
    }
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut occ_s = mdp.initial_dist().to_vec();
    let mut occ_sa = Array3::<f64>::zeros((h, s, a));
    for t in 0..h {
        for si in 0..s {
            for ai in 0..a {
                occ_sa[[t, si, ai]] = occ_s[si] * policy.prob(t, si, ai);
            }
        }
        if t + 1 < h {
            let mut next = vec![0.0f64; s];
            for si in 0..s {
                for ai in 0..a {
                    let w = occ_sa[[t, si, ai]];
                    if w == 0.0 {
                        continue;
                    }
                    for sj in 0..s {
                        next[sj] += w * mdp.transition()[[si, ai, sj]];
                    }
                }
            }
            occ_s = next;
        }
    }
    Ok(JointOccupancy {
        occ_sa,
        rtg: rtg_table(mdp, policy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use approx::assert_abs_diff_eq;

    /// Brute-force oracle: expected return of an open-loop action plan,
    /// by exact forward products over state distributions.
    fn open_loop_value(mdp: &TabularMdp, plan: &[usize]) -> f64 {
        let s_n = mdp.num_states();
        let mut dist = mdp.initial_dist().to_vec();
        let mut total = 0.0;
        for (t, &a) in plan.iter().enumerate() {
            for si in 0..s_n {
                total += dist[si] * mdp.reward()[[si, a]];
            }
            if t + 1 < plan.len() {
                let mut next = vec![0.0; s_n];
                for si in 0..s_n {
                    if dist[si] > 0.0 {
                        for sj in 0..s_n {
                            next[sj] += dist[si] * mdp.transition()[[si, a, sj]];
                        }
                    }
                }
                dist = next;
            }
        }
        total
    }

    #[test]
    fn value_iteration_zero_reward() {
        let mdp = TabularMdp::new(
            3,
            Array3::from_elem((1, 1, 1), 1.0),
            Array2::zeros((1, 1)),
            Array1::from_vec(vec![1.0]),
            1.0,
        )
        .unwrap();
        let (_, j) = value_iteration(&mdp);
        assert_eq!(j, 0.0);
    }

    #[test]
    fn value_iteration_constant_reward() {
        let mdp = envs::random_mdp(4, 2, 6, 11, 0, 1.0).unwrap();
        // overwrite rewards with a constant
        let c = 3.0;
        let mdp = TabularMdp::new(
            mdp.horizon(),
            mdp.transition().clone(),
            Array2::from_elem((4, 2), c),
            mdp.initial_dist().clone(),
            1.0,
        )
        .unwrap();
        let (_, j) = value_iteration(&mdp);
        assert_abs_diff_eq!(j, c * 6.0, epsilon = 1e-12);
    }

    #[test]
    fn chain_walk_optimum_matches_plan_enumeration() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let (pi_star, j_star) = value_iteration(&mdp);
        // Exhaustive enumeration of all 2^5 deterministic open-loop plans.
        let mut best = f64::NEG_INFINITY;
        for code in 0..(1u32 << 5) {
            let plan: Vec<usize> = (0..5).map(|t| ((code >> t) & 1) as usize).collect();
            best = best.max(open_loop_value(&mdp, &plan));
        }
        assert_abs_diff_eq!(j_star, best, epsilon = 1e-12);
        // Frozen from the enumeration oracle: four successful right moves.
        assert_abs_diff_eq!(j_star, 0.6561, epsilon = 1e-12);
        assert_abs_diff_eq!(policy_value(&mdp, &pi_star).unwrap(), j_star, epsilon = 1e-12);
    }

    #[test]
    fn always_left_earns_nothing() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let left = StationaryPolicy::deterministic(5, 5, 2, &vec![0; 25]);
        assert_eq!(policy_value(&mdp, &left).unwrap(), 0.0);
    }

    #[test]
    fn policy_value_matches_monte_carlo() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let exact = policy_value(&mdp, &beta).unwrap();
        let ds = crate::data::collect(&mdp, &beta, 1_000_000, 97).unwrap();
        let returns: Vec<f64> = ds.trajectories().iter().map(|t| t.episode_return()).collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "MC mean {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn rtg_terminal_step_is_point_mass() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let d = return_to_go_distribution(&mdp, &beta, 4, 4, 1).unwrap();
        assert_eq!(d.offsets(), &[1]);
        assert_abs_diff_eq!(d.total_mass(), 1.0, epsilon = 1e-12);
    }

    /// Recursive oracle: exact return pmf by enumerating every branch of
    /// (next state, next action) to the horizon.
    fn enumerate_rtg(
        mdp: &TabularMdp,
        policy: &StationaryPolicy,
        t: usize,
        s: usize,
        a: usize,
        acc: &mut BTreeMap<i64, f64>,
        weight: f64,
        partial: i64,
    ) {
        let partial = partial + mdp.reward_offset(s, a);
        if t == mdp.horizon() - 1 {
            *acc.entry(partial).or_insert(0.0) += weight;
            return;
        }
        for sj in 0..mdp.num_states() {
            let p = mdp.transition()[[s, a, sj]];
            if p == 0.0 {
                continue;
            }
            for aj in 0..mdp.num_actions() {
                let w = policy.prob(t + 1, sj, aj);
                if w == 0.0 {
                    continue;
                }
                enumerate_rtg(mdp, policy, t + 1, sj, aj, acc, weight * p * w, partial);
            }
        }
    }

    #[test]
    fn rtg_matches_exhaustive_enumeration() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let d = return_to_go_distribution(&mdp, &beta, 0, 0, 1).unwrap();
        let mut acc = BTreeMap::new();
        enumerate_rtg(&mdp, &beta, 0, 0, 1, &mut acc, 1.0, 0);
        let oracle = ReturnDistribution::from_atoms(1.0, acc, (0, 0, 1));
        assert_eq!(d.offsets(), oracle.offsets());
        for (m, om) in d.mass().iter().zip(oracle.mass()) {
            assert_abs_diff_eq!(m, om, epsilon = 1e-12);
        }
    }

    #[test]
    fn rtg_deterministic_mdp_point_mass() {
        // deterministic chain: success prob 1
        let mdp = envs::chain_walk(4, 4, 1.0).unwrap();
        let right = StationaryPolicy::deterministic(4, 4, 2, &vec![1; 16]);
        let d = return_to_go_distribution(&mdp, &right, 0, 0, 1).unwrap();
        assert_eq!(d.offsets().len(), 1);
        // 0 -> 1 -> 2 -> 3, reward 1 only in state 3 at the last step
        assert_eq!(d.offsets()[0], 1);
    }

    #[test]
    fn rtg_masses_normalize() {
        let mdp = envs::random_mdp(4, 3, 5, 3, 3, 0.5).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let table = rtg_table(&mdp, &beta).unwrap();
        for d in table.dists() {
            assert_abs_diff_eq!(d.total_mass(), 1.0, epsilon = 1e-10);
        }
    }

    /// Forward-DP oracle for state-action occupancy, written independently
    /// of `joint_occupancy`.
    fn occupancy_oracle(mdp: &TabularMdp, policy: &StationaryPolicy) -> Array3<f64> {
        let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let mut out = Array3::<f64>::zeros((h, s, a));
        let mut dist = mdp.initial_dist().to_vec();
        for t in 0..h {
            for si in 0..s {
                for ai in 0..a {
                    out[[t, si, ai]] = dist[si] * policy.prob(t, si, ai);
                }
            }
            let mut next = vec![0.0; s];
            for si in 0..s {
                for ai in 0..a {
                    for sj in 0..s {
                        next[sj] += out[[t, si, ai]] * mdp.transition()[[si, ai, sj]];
                    }
                }
            }
            dist = next;
        }
        out
    }

    #[test]
    fn joint_occupancy_marginals_and_total() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let joint = joint_occupancy(&mdp, &beta).unwrap();
        assert_abs_diff_eq!(joint.total_mass(), 5.0, epsilon = 1e-9);
        let oracle = occupancy_oracle(&mdp, &beta);
        for t in 0..5 {
            for s in 0..5 {
                for a in 0..2 {
                    let marginal: f64 = joint
                        .rtg()
                        .get(t, s, a)
                        .offsets()
                        .iter()
                        .map(|&k| joint.mass(t, s, a, k))
                        .sum();
                    assert_abs_diff_eq!(marginal, oracle[[t, s, a]], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn joint_occupancy_single_step() {
        let mdp = envs::random_mdp(3, 2, 1, 5, 2, 1.0).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let joint = joint_occupancy(&mdp, &beta).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let k = mdp.reward_offset(s, a);
                assert_abs_diff_eq!(
                    joint.mass(0, s, a, k),
                    mdp.initial_dist()[s] * 0.5,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn policy_value_consistent_with_joint_occupancy() {
        let mdp = envs::random_mdp(4, 2, 5, 9, 3, 0.5).unwrap();
        let beta = StationaryPolicy::uniform(&mdp);
        let joint = joint_occupancy(&mdp, &beta).unwrap();
        let mut j = 0.0;
        for s in 0..4 {
            for a in 0..2 {
                let d = joint.rtg().get(0, s, a);
                j += joint.occupancy()[[0, s, a]] * d.mean();
            }
        }
        assert_abs_diff_eq!(j, policy_value(&mdp, &beta).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn value_iteration_is_greedy_consistent() {
        // no single-(t,s) deviation improves the value
        let mdp = envs::random_mdp(5, 2, 4, 21, 3, 0.5).unwrap();
        let (pi, j) = value_iteration(&mdp);
        let (h, s_n, a_n) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let mut base_actions = vec![0usize; h * s_n];
        for t in 0..h {
            for s in 0..s_n {
                base_actions[t * s_n + s] = (0..a_n).find(|&a| pi.prob(t, s, a) == 1.0).unwrap();
            }
        }
        for t in 0..h {
            for s in 0..s_n {
                for a in 0..a_n {
                    let mut actions = base_actions.clone();
                    actions[t * s_n + s] = a;
                    let dev = StationaryPolicy::deterministic(h, s_n, a_n, &actions);
                    assert!(policy_value(&mdp, &dev).unwrap() <= j + 1e-10);
                }
            }
        }
    }

    #[test]
    fn mdp_json_round_trip_and_fingerprint() {
        let mdp = envs::chain_walk(5, 5, 0.9).unwrap();
        let text = mdp.to_json();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(mdp, back);
        assert_eq!(mdp.fingerprint(), back.fingerprint());
        assert_eq!(mdp.fingerprint().len(), 16);
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let mut t = Array3::from_elem((2, 1, 2), 0.5);
        t[[0, 0, 0]] = 0.7; // row sums to 1.2
        let err = TabularMdp::new(
            2,
            t,
            Array2::zeros((2, 1)),
            Array1::from_vec(vec![1.0, 0.0]),
            1.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn off_grid_reward_rejected() {
        let t = Array3::from_elem((1, 1, 1), 1.0);
        let r = Array2::from_elem((1, 1), 0.3);
        assert!(TabularMdp::new(2, t, r, Array1::from_vec(vec![1.0]), 0.25).is_err());
    }
}
