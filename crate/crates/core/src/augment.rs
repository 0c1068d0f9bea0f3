//! Return-to-go transformations applied to source datasets so that a
//! return-conditioned policy trained on them approximates one trained on
//! target data:
//!
//! - `psi_dara`: add the accumulated classifier reward correction,
//!   new_rtg[t] = sum_{h>=t} r_h + eta * sum_{h>=t} dr(s_h, a_h, s_{h+1}).
//! - `psi_mean_variance`: per-(t,s,a) standardize-and-rescale with the
//!   sigma ratio clipped to [theta_lo, theta_hi].
//! - `psi_exact_cdf`: randomized-rank CDF matching; the pushforward of
//!   the source return law equals the target return law exactly.
//!
//! Every transform leaves the (s, a, r) steps bit-identical and rewrites
//! only rtg.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::DeltaRTable;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{
    fnv1a64_hex, rtg_table, ReturnDistribution, RtgTable, StationaryPolicy, TabularMdp,
};
use crate::rng;

/// Stock transform constants: dr coefficient, sigma-ratio clip window.
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_CLIP_LO: f64 = 0.9;
pub const DEFAULT_CLIP_HI: f64 = 1.25;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_DR_CLAMP: f64 = 10.0;
/// Softmax temperature for the n-action sigma estimate (exposed in
/// config; the estimation procedure itself fixes 1.0).
pub const DEFAULT_SOFTMAX_TEMP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub sigma_floor: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            theta_lo: DEFAULT_CLIP_LO,
            theta_hi: DEFAULT_CLIP_HI,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_lo > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta_lo must be positive, got {}",
                self.theta_lo
            )));
        }
        if self.theta_hi < self.theta_lo {
            return Err(Error::InvalidArgument(format!(
                "theta_hi {} must be >= theta_lo {}",
                self.theta_hi, self.theta_lo
            )));
        }
        if self.sigma_floor < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma_floor must be nonnegative, got {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }

    pub fn wide() -> Self {
        Self {
            theta_lo: 1e-3,
            theta_hi: 1e3,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsEstimator {
    ExactDp,
    FittedValue,
    TrajectoryEmpirical,
}

/// Per-(t, s, a) mean and standard deviation of the return-to-go, with
/// observation counts and a trajectory-level fallback for pairs the
/// estimator never saw.
#[derive(Debug, Clone)]
pub struct ReturnStats {
    pub mu: Array3<f64>,    // [t][s][a]; t collapses to one row when !time_indexed
    pub sigma: Array3<f64>, // same shape
    pub count: Array3<u64>,
    pub estimator: StatsEstimator,
    pub time_indexed: bool,
    pub global_mu: f64,
    pub global_sigma: f64,
}

impl ReturnStats {
    fn t_index(&self, t: usize) -> usize {
        if self.time_indexed {
            t
        } else {
            0
        }
    }

    /// In-bounds and backed by at least one observation? Estimators size
    /// their tables from their own data, so a lookup driven by a
    /// different dataset may step outside them.
    pub fn supported(&self, t: usize, s: usize, a: usize) -> bool {
        let ti = self.t_index(t);
        let (tn, sn, an) = self.count.dim();
        ti < tn && s < sn && a < an && self.count[[ti, s, a]] > 0
    }

    /// (mu, sigma, used_fallback)
    pub fn lookup(&self, t: usize, s: usize, a: usize) -> (f64, f64, bool) {
        if self.supported(t, s, a) {
            let ti = self.t_index(t);
            (self.mu[[ti, s, a]], self.sigma[[ti, s, a]], false)
        } else {
            (self.global_mu, self.global_sigma, true)
        }
    }
}

/// Exact moments of the behavior return-to-go distributions.
pub fn exact_dp_stats(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<ReturnStats> {
    let table = rtg_table(mdp, policy)?;
    let (h, s_n, a_n) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut mu = Array3::<f64>::zeros((h, s_n, a_n));
    let mut sigma = Array3::<f64>::zeros((h, s_n, a_n));
    let count = Array3::<u64>::from_elem((h, s_n, a_n), 1);
    for t in 0..h {
        for s in 0..s_n {
            for a in 0..a_n {
                let d = table.get(t, s, a);
                mu[[t, s, a]] = d.mean();
                sigma[[t, s, a]] = d.std();
            }
        }
    }
    Ok(ReturnStats {
        mu,
        sigma,
        count,
        estimator: StatsEstimator::ExactDp,
        time_indexed: true,
        global_mu: 0.0,
        global_sigma: 0.0,
    })
}

/// Per-(t,s,a) sample mean/std of observed rtg values; trajectory-level
/// return mean/std recorded as the fallback for unvisited pairs.
pub fn trajectory_empirical_stats(ds: &Dataset, time_indexed: bool) -> Result<ReturnStats> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "empirical stats need a nonempty dataset".into(),
        ));
    }
    let h = ds.horizon();
    let (s_n, a_n) = dataset_dims(ds);
    let t_rows = if time_indexed { h } else { 1 };
    let mut sum = Array3::<f64>::zeros((t_rows, s_n, a_n));
    let mut sumsq = Array3::<f64>::zeros((t_rows, s_n, a_n));
    let mut count = Array3::<u64>::zeros((t_rows, s_n, a_n));
    for traj in ds.trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            let ti = if time_indexed { t } else { 0 };
            let g = traj.rtg[t];
            sum[[ti, s, a]] += g;
            sumsq[[ti, s, a]] += g * g;
            count[[ti, s, a]] += 1;
        }
    }
    let mut mu = Array3::<f64>::zeros((t_rows, s_n, a_n));
    let mut sigma = Array3::<f64>::zeros((t_rows, s_n, a_n));
    for ((idx, &c), (m, sg)) in count
        .indexed_iter()
        .zip(mu.iter_mut().zip(sigma.iter_mut()))
    {
        if c > 0 {
            let n = c as f64;
            let mean = sum[idx] / n;
            *m = mean;
            *sg = (sumsq[idx] / n - mean * mean).max(0.0).sqrt();
        }
    }
    let returns: Vec<f64> = ds.trajectories().iter().map(|t| t.rtg[0]).collect();
    let n = returns.len() as f64;
    let gmu = returns.iter().sum::<f64>() / n;
    let gvar = returns.iter().map(|g| (g - gmu).powi(2)).sum::<f64>() / n;
    Ok(ReturnStats {
        mu,
        sigma,
        count,
        estimator: StatsEstimator::TrajectoryEmpirical,
        time_indexed,
        global_mu: gmu,
        global_sigma: gvar.max(0.0).sqrt(),
    })
}

fn dataset_dims(ds: &Dataset) -> (usize, usize) {
    let mut s_n = 1;
    let mut a_n = 1;
    for traj in ds.trajectories() {
        for &(s, a, _) in &traj.steps {
            s_n = s_n.max(s + 1);
            a_n = a_n.max(a + 1);
        }
    }
    (s_n, a_n)
}

/// Empirical MDP built from dataset transition counts. Unvisited pairs
/// get a uniform row, zero reward, and a false support flag.
pub struct EmpiricalModel {
    pub transition: Array3<f64>,
    pub reward: ndarray::Array2<f64>,
    pub visited: ndarray::Array2<bool>,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
}

pub fn empirical_model(ds: &Dataset) -> Result<EmpiricalModel> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "empirical model needs a nonempty dataset".into(),
        ));
    }
    let (s_n, a_n) = dataset_dims(ds);
    let h = ds.horizon();
    let mut counts = Array3::<f64>::zeros((s_n, a_n, s_n));
    let mut reward = ndarray::Array2::<f64>::zeros((s_n, a_n));
    let mut visits = ndarray::Array2::<f64>::zeros((s_n, a_n));
    for traj in ds.trajectories() {
        for t in 0..traj.horizon() {
            let (s, a, r) = traj.steps[t];
            visits[[s, a]] += 1.0;
            reward[[s, a]] += r;
            if t + 1 < traj.horizon() {
                let (s2, _, _) = traj.steps[t + 1];
                counts[[s, a, s2]] += 1.0;
            }
        }
    }
    let mut transition = Array3::<f64>::zeros((s_n, a_n, s_n));
    let mut visited = ndarray::Array2::<bool>::from_elem((s_n, a_n), false);
    for s in 0..s_n {
        for a in 0..a_n {
            if visits[[s, a]] > 0.0 {
                visited[[s, a]] = true;
                reward[[s, a]] /= visits[[s, a]];
            }
            let row_total: f64 = (0..s_n).map(|s2| counts[[s, a, s2]]).sum();
            if row_total > 0.0 {
                for s2 in 0..s_n {
                    transition[[s, a, s2]] = counts[[s, a, s2]] / row_total;
                }
            } else {
                for s2 in 0..s_n {
                    transition[[s, a, s2]] = 1.0 / s_n as f64;
                }
            }
        }
    }
    Ok(EmpiricalModel {
        transition,
        reward,
        visited,
        num_states: s_n,
        num_actions: a_n,
        horizon: h,
    })
}

/// Optimal Q by backward induction on an empirical model: Q_t(s,a) =
/// r_hat(s,a) + sum_s' p_hat(s'|s,a) max_a' Q_{t+1}(s',a').
pub fn empirical_q(model: &EmpiricalModel) -> Array3<f64> {
    let (h, s_n, a_n) = (model.horizon, model.num_states, model.num_actions);
    let mut q = Array3::<f64>::zeros((h, s_n, a_n));
    let mut v_next = vec![0.0f64; s_n];
    for t in (0..h).rev() {
        let mut v_here = vec![0.0f64; s_n];
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_n {
                let mut x = model.reward[[s, a]];
                for s2 in 0..s_n {
                    let p = model.transition[[s, a, s2]];
                    if p > 0.0 {
                        x += p * v_next[s2];
                    }
                }
                q[[t, s, a]] = x;
                best = best.max(x);
            }
            v_here[s] = best;
        }
        v_next = v_here;
    }
    q
}

/// Value-function route to return stats: fit Q on the dataset's
/// empirical model; mu(t,s,a) = Q_t(s,a); sigma(t,s,·) = std of the Q
/// values of n actions sampled from softmax(Q_t(s,·) / temperature).
pub fn fitted_value_stats(
    ds: &Dataset,
    n_action_samples: usize,
    softmax_temp: f64,
    seed: u64,
) -> Result<ReturnStats> {
    if n_action_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_action_samples must be at least 1".into(),
        ));
    }
    let model = empirical_model(ds)?;
    let q = empirical_q(&model);
    let (h, s_n, a_n) = (model.horizon, model.num_states, model.num_actions);
    let mut mu = Array3::<f64>::zeros((h, s_n, a_n));
    let mut sigma = Array3::<f64>::zeros((h, s_n, a_n));
    // support is time-indexed: an estimate at (t,s,a) is only backed by
    // data if that pair was actually visited at step t
    let mut count = Array3::<u64>::zeros((h, s_n, a_n));
    for traj in ds.trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            count[[t, s, a]] += 1;
        }
    }
    for t in 0..h {
        for s in 0..s_n {
            let mut probs: Vec<f64> = (0..a_n).map(|a| (q[[t, s, a]] / softmax_temp).exp()).collect();
            let z: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= z;
            }
            let mut r = rng::stream(seed, &[rng::labels::STATS, t as u64, s as u64]);
            let samples: Vec<f64> = (0..n_action_samples)
                .map(|_| q[[t, s, rng::sample_categorical(&mut r, &probs)]])
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let sd = var.max(0.0).sqrt();
            for a in 0..a_n {
                mu[[t, s, a]] = q[[t, s, a]];
                sigma[[t, s, a]] = sd;
            }
        }
    }
    // trajectory-level fallback, same as the empirical estimator
    let emp = trajectory_empirical_stats(ds, false)?;
    Ok(ReturnStats {
        mu,
        sigma,
        count,
        estimator: StatsEstimator::FittedValue,
        time_indexed: true,
        global_mu: emp.global_mu,
        global_sigma: emp.global_sigma,
    })
}

/// Dispatcher over the three estimation routes.
pub fn estimate_return_stats(
    estimator: StatsEstimator,
    ds: Option<&Dataset>,
    mdp: Option<&TabularMdp>,
    policy: Option<&StationaryPolicy>,
    n_action_samples: usize,
    softmax_temp: f64,
    seed: u64,
    time_indexed: bool,
) -> Result<ReturnStats> {
    match estimator {
        StatsEstimator::ExactDp => {
            let mdp = mdp.ok_or_else(|| {
                Error::InvalidArgument("exact_dp estimator needs an MDP".into())
            })?;
            let policy = policy.ok_or_else(|| {
                Error::InvalidArgument("exact_dp estimator needs a behavior policy".into())
            })?;
            exact_dp_stats(mdp, policy)
        }
        StatsEstimator::FittedValue => {
            let ds = ds.ok_or_else(|| {
                Error::InvalidArgument("fitted_value estimator needs a dataset".into())
            })?;
            fitted_value_stats(ds, n_action_samples, softmax_temp, seed)
        }
        StatsEstimator::TrajectoryEmpirical => {
            let ds = ds.ok_or_else(|| {
                Error::InvalidArgument("trajectory_empirical estimator needs a dataset".into())
            })?;
            trajectory_empirical_stats(ds, time_indexed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    Identity,
    Dara,
    MeanVariance,
    MeanVarianceEmpirical,
    ExactCdf,
}

impl PsiKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PsiKind::Identity => "identity",
            PsiKind::Dara => "dara",
            PsiKind::MeanVariance => "mean_variance",
            PsiKind::MeanVarianceEmpirical => "mean_variance_empirical",
            PsiKind::ExactCdf => "exact_cdf",
        }
    }
}

/// Diagnostics accumulated while transforming.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AugmentDiagnostics {
    /// steps transformed
    pub steps: u64,
    /// dr lookups of transitions marked unsupported (treated as 0)
    pub dr_misses: u64,
    /// steps that fell back to trajectory-level stats
    pub stat_fallbacks: u64,
    /// steps whose sigma ratio hit a clip bound
    pub clip_engaged: u64,
}

/// A dataset whose rtg fields were rewritten by a transform. Steps are
/// bit-identical to the base dataset.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    dataset: Dataset,
    pub psi_kind: PsiKind,
    pub params: serde_json::Value,
    /// FNV-1a of base dataset identity and transform parameters
    pub provenance: String,
    pub diagnostics: AugmentDiagnostics,
}

impl AugmentedDataset {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    fn build(
        base: &Dataset,
        dataset: Dataset,
        psi_kind: PsiKind,
        params: serde_json::Value,
        diagnostics: AugmentDiagnostics,
    ) -> Self {
        let provenance = fnv1a64_hex(
            format!(
                "{}|{}|{}|{}",
                base.mdp_fingerprint,
                base.seed,
                psi_kind.as_str(),
                params
            )
            .as_bytes(),
        );
        Self {
            dataset,
            psi_kind,
            params,
            provenance,
            diagnostics,
        }
    }
}

/// DARA-style composite: new_rtg[t] = sum_{h>=t} r_h + eta * sum_{h>=t}
/// dr(s_h, a_h, s_{h+1}). The final step has no successor, so its
/// correction term is the accumulated tail ending at H-1.
pub fn psi_dara(ds: &Dataset, dr: &DeltaRTable, eta: f64) -> Result<AugmentedDataset> {
    if eta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "eta must be nonnegative, got {eta}"
        )));
    }
    let mut diagnostics = AugmentDiagnostics::default();
    let mut out = ds.clone();
    for traj in out.trajectories_mut() {
        let h = traj.horizon();
        // backward pass: accumulate reward and correction tails
        let mut reward_tail = 0.0;
        let mut dr_tail = 0.0;
        for t in (0..h).rev() {
            let (s, a, r) = traj.steps[t];
            reward_tail = r + reward_tail;
            if t + 1 < h {
                let (s2, _, _) = traj.steps[t + 1];
                let (v, supported) = dr.get(s, a, s2);
                if !supported {
                    diagnostics.dr_misses += 1;
                }
                dr_tail += v;
            }
            traj.rtg[t] = reward_tail + eta * dr_tail;
            diagnostics.steps += 1;
        }
    }
    let params = serde_json::json!({ "eta": eta, "clamp": dr.clamp_bound });
    Ok(AugmentedDataset::build(ds, out, PsiKind::Dara, params, diagnostics))
}

/// Mean-variance matching: per step, rho = clamp(sigma_tgt /
/// max(sigma_src, floor), theta_lo, theta_hi); new_rtg = (g - mu_src) *
/// rho + mu_tgt.
pub fn psi_mean_variance(
    ds: &Dataset,
    src: &ReturnStats,
    tgt: &ReturnStats,
    clip: &ClipConfig,
) -> Result<AugmentedDataset> {
    psi_mean_variance_kind(ds, src, tgt, clip, PsiKind::MeanVariance)
}

pub fn psi_mean_variance_kind(
    ds: &Dataset,
    src: &ReturnStats,
    tgt: &ReturnStats,
    clip: &ClipConfig,
    kind: PsiKind,
) -> Result<AugmentedDataset> {
    clip.validate()?;
    let mut diagnostics = AugmentDiagnostics::default();
    let mut out = ds.clone();
    for traj in out.trajectories_mut() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            let (mu_s, sigma_s, fb_s) = src.lookup(t, s, a);
            let (mu_t, sigma_t, fb_t) = tgt.lookup(t, s, a);
            if fb_s || fb_t {
                diagnostics.stat_fallbacks += 1;
            }
            let raw = sigma_t / sigma_s.max(clip.sigma_floor);
            let rho = raw.clamp(clip.theta_lo, clip.theta_hi);
            if rho != raw {
                diagnostics.clip_engaged += 1;
            }
            traj.rtg[t] = (traj.rtg[t] - mu_s) * rho + mu_t;
            diagnostics.steps += 1;
        }
    }
    let params = serde_json::json!({
        "theta_lo": clip.theta_lo,
        "theta_hi": clip.theta_hi,
        "sigma_floor": clip.sigma_floor,
        "src_estimator": format!("{:?}", src.estimator),
        "tgt_estimator": format!("{:?}", tgt.estimator),
    });
    Ok(AugmentedDataset::build(ds, out, kind, params, diagnostics))
}

/// Exact CDF matching with randomized ranks. For each step, u is drawn
/// uniformly inside the source atom's CDF interval and mapped through the
/// target generalized inverse, so the pushforward of the source return
/// law equals the target law exactly even with discrete atoms.
pub fn psi_exact_cdf(
    ds: &Dataset,
    source_dists: &RtgTable,
    target_dists: &RtgTable,
    seed: u64,
) -> Result<AugmentedDataset> {
    if source_dists.horizon() != target_dists.horizon()
        || source_dists.num_states() != target_dists.num_states()
        || source_dists.num_actions() != target_dists.num_actions()
    {
        return Err(Error::ShapeMismatch(
            "source and target distribution tables disagree in shape".into(),
        ));
    }
    let grid = source_dists.grid();
    let mut diagnostics = AugmentDiagnostics::default();
    let mut out = ds.clone();
    for (i, traj) in out.trajectories_mut().iter_mut().enumerate() {
        let mut r = rng::stream(seed, &[rng::labels::AUGMENT, i as u64]);
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            let g = traj.rtg[t];
            let k = (g / grid).round() as i64;
            if ((k as f64) * grid - g).abs() > grid * 0.1 {
                return Err(Error::SourceSupport {
                    t,
                    state: s,
                    action: a,
                    g,
                });
            }
            let src = source_dists.get(t, s, a);
            let (below, atom) = src.cdf_parts(k);
            if atom <= 0.0 {
                return Err(Error::SourceSupport {
                    t,
                    state: s,
                    action: a,
                    g,
                });
            }
            let u = below + r.random::<f64>() * atom;
            let tgt = target_dists.get(t, s, a);
            traj.rtg[t] = tgt.quantile_offset(u) as f64 * grid;
            diagnostics.steps += 1;
        }
    }
    let params = serde_json::json!({ "seed": seed });
    Ok(AugmentedDataset::build(ds, out, PsiKind::ExactCdf, params, diagnostics))
}

/// Analytic pushforward of a source return law through the exact-CDF
/// transform: source atom CDF intervals are mapped onto target atom
/// intervals by overlap. Since the source intervals tile [0, 1], the
/// result reproduces the target law; the function exists so that the
/// infinite-data route is computed rather than assumed.
pub fn pushforward_exact_cdf(
    source: &ReturnDistribution,
    target: &ReturnDistribution,
) -> ReturnDistribution {
    let mut atoms: Vec<(i64, f64)> = Vec::new();
    let mut src_lo = 0.0;
    for (i, &sm) in source.mass().iter().enumerate() {
        let src_hi = src_lo + sm;
        // overlap with target intervals
        let mut tgt_lo = 0.0;
        for (j, &tm) in target.mass().iter().enumerate() {
            let tgt_hi = tgt_lo + tm;
            let lo = src_lo.max(tgt_lo);
            let hi = src_hi.min(tgt_hi);
            if hi > lo {
                atoms.push((target.offsets()[j], hi - lo));
            }
            tgt_lo = tgt_hi;
        }
        let _ = i;
        src_lo = src_hi;
    }
    ReturnDistribution::from_atoms(target.grid(), atoms, target.conditioning())
}

/// Pushforward table for every (t, s, a).
pub fn pushforward_table(source: &RtgTable, target: &RtgTable) -> RtgTable {
    let dists = source
        .dists()
        .iter()
        .zip(target.dists())
        .map(|(s, t)| pushforward_exact_cdf(s, t))
        .collect();
    source.with_dists(dists)
}

/// Diagnostic for one (t, s, a) cell of `dara_cdf_equivalence`.
#[derive(Debug, Clone, Serialize)]
pub struct CellEquivalence {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    /// observed g -> psi(g) map is single-valued and injective
    pub deterministic_invertible: bool,
    /// total variation between the map's pushforward of the exact source
    /// law and the exact target law (outputs rounded to the grid); only
    /// present when the map is deterministic, invertible, and observed on
    /// the whole source support
    pub tv_to_target: Option<f64>,
}

/// Reports how close a reward-correction relabeling comes to the exact
/// CDF transform: where the observed per-(t,s,a) relabeling map is a
/// deterministic invertible function, its pushforward of the source
/// return law is compared against the target law. Diagnostic only; the
/// equivalence is never asserted.
pub fn dara_cdf_equivalence(
    original: &Dataset,
    relabeled: &Dataset,
    source_dists: &RtgTable,
    target_dists: &RtgTable,
) -> Vec<CellEquivalence> {
    use std::collections::HashMap;
    let grid = source_dists.grid();
    let mut maps: HashMap<(usize, usize, usize), HashMap<i64, Vec<f64>>> = HashMap::new();
    for (before, after) in original.trajectories().iter().zip(relabeled.trajectories()) {
        for (t, &(s, a, _)) in before.steps.iter().enumerate() {
            let k_in = (before.rtg[t] / grid).round() as i64;
            maps.entry((t, s, a))
                .or_default()
                .entry(k_in)
                .or_default()
                .push(after.rtg[t]);
        }
    }
    let mut out: Vec<CellEquivalence> = maps
        .into_iter()
        .map(|((t, s, a), per_input)| {
            let mut deterministic = true;
            let mut outputs: Vec<(i64, f64)> = Vec::new();
            for (k_in, vals) in &per_input {
                let first = vals[0];
                if vals.iter().any(|v| (v - first).abs() > 1e-12) {
                    deterministic = false;
                }
                outputs.push((*k_in, first));
            }
            let mut sorted: Vec<f64> = outputs.iter().map(|&(_, v)| v).collect();
            sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let injective = sorted.windows(2).all(|w| (w[1] - w[0]).abs() > 1e-12);
            let ok = deterministic && injective;
            let src = source_dists.get(t, s, a);
            let covered = src
                .offsets()
                .iter()
                .all(|k| per_input.contains_key(k));
            let tv = (ok && covered).then(|| {
                // pushforward of the exact source law through the map,
                // rounded back onto the grid
                let lookup: HashMap<i64, f64> = outputs.into_iter().collect();
                let pushed = ReturnDistribution::from_atoms(
                    grid,
                    src.offsets().iter().zip(src.mass()).map(|(k, &m)| {
                        ((lookup[k] / grid).round() as i64, m)
                    }),
                    (t, s, a),
                );
                let tgt = target_dists.get(t, s, a);
                let mut ks: Vec<i64> = pushed.offsets().to_vec();
                ks.extend(tgt.offsets());
                ks.sort_unstable();
                ks.dedup();
                0.5 * ks
                    .iter()
                    .map(|&k| (pushed.pmf_at(k) - tgt.pmf_at(k)).abs())
                    .sum::<f64>()
            });
            CellEquivalence {
                t,
                s,
                a,
                deterministic_invertible: ok,
                tv_to_target: tv,
            }
        })
        .collect();
    out.sort_by_key(|c| (c.t, c.s, c.a));
    out
}

/// Parameters for the `augment` dispatcher.
pub enum PsiParams<'a> {
    Identity,
    Dara {
        dr: &'a DeltaRTable,
        eta: f64,
    },
    MeanVariance {
        src: &'a ReturnStats,
        tgt: &'a ReturnStats,
        clip: ClipConfig,
        empirical_variant: bool,
    },
    ExactCdf {
        source_dists: &'a RtgTable,
        target_dists: &'a RtgTable,
        seed: u64,
    },
}

/// Route a dataset through the requested transform.
pub fn augment(ds: &Dataset, params: PsiParams<'_>) -> Result<AugmentedDataset> {
    match params {
        PsiParams::Identity => Ok(AugmentedDataset::build(
            ds,
            ds.clone(),
            PsiKind::Identity,
            serde_json::json!({}),
            AugmentDiagnostics::default(),
        )),
        PsiParams::Dara { dr, eta } => psi_dara(ds, dr, eta),
        PsiParams::MeanVariance {
            src,
            tgt,
            clip,
            empirical_variant,
        } => psi_mean_variance_kind(
            ds,
            src,
            tgt,
            &clip,
            if empirical_variant {
                PsiKind::MeanVarianceEmpirical
            } else {
                PsiKind::MeanVariance
            },
        ),
        PsiParams::ExactCdf {
            source_dists,
            target_dists,
            seed,
        } => psi_exact_cdf(ds, source_dists, target_dists, seed),
    }
}
