//! Offline datasets: rollout collection, returns-to-go, consistent-return
//! window slicing, mixing, and JSON-lines persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{StationaryPolicy, TabularMdp};
use crate::rng;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

/// One length-H episode: (state, action, reward) steps plus returns-to-go.
/// `rtg[t] = reward[t] + rtg[t+1]`, `rtg[H-1] = reward[H-1]` on freshly
/// collected data; augmentation transforms may overwrite `rtg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize, f64)>,
    pub rtg: Vec<f64>,
    pub domain_tag: DomainTag,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Episode return computed from realized rewards (backward sum, the
    /// same association order the rtg recurrence uses).
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, &(_, _, r)| r + acc)
    }

    /// Recompute rtg from the realized rewards.
    pub fn recompute_rtg(&mut self) {
        let h = self.steps.len();
        self.rtg = vec![0.0; h];
        let mut acc = 0.0;
        for t in (0..h).rev() {
            acc += self.steps[t].2;
            // keep the exact backward association: acc = r_t + previous acc
            self.rtg[t] = acc;
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rtg.len() != self.steps.len() {
            return Err(Error::ShapeMismatch(
                "trajectory rtg and steps lengths differ".into(),
            ));
        }
        Ok(())
    }
}

/// A tagged collection of trajectories from one (or, after `mix`, two)
/// domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    pub mdp_fingerprint: String,
    pub behavior_policy_id: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        mdp_fingerprint: String,
        behavior_policy_id: String,
        seed: u64,
    ) -> Result<Self> {
        for t in &trajectories {
            t.validate()?;
        }
        if let Some(h) = trajectories.first().map(|t| t.horizon()) {
            if trajectories.iter().any(|t| t.horizon() != h) {
                return Err(Error::ShapeMismatch(
                    "trajectories have differing lengths".into(),
                ));
            }
        }
        Ok(Self {
            trajectories,
            mdp_fingerprint,
            behavior_policy_id,
            seed,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }
    pub fn trajectories_mut(&mut self) -> &mut [Trajectory] {
        &mut self.trajectories
    }
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.horizon())
    }

    pub fn tag_counts(&self) -> (usize, usize) {
        let target = self
            .trajectories
            .iter()
            .filter(|t| t.domain_tag == DomainTag::Target)
            .count();
        (target, self.trajectories.len() - target)
    }

    /// Maximum episode return present in the dataset (by rtg[0]).
    pub fn max_return(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.rtg[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Quantile of episode returns (nearest-rank on the sorted list).
    pub fn return_quantile(&self, q: f64) -> f64 {
        let mut returns: Vec<f64> = self.trajectories.iter().map(|t| t.rtg[0]).collect();
        returns.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((q * returns.len() as f64).ceil() as usize).clamp(1, returns.len()) - 1;
        returns[idx]
    }
}

/// Roll out `n` i.i.d. episodes under `policy`. Trajectory `i` draws from
/// a sub-seed derived from (seed, i), so parallel and serial collection
/// produce identical datasets.
pub fn collect(
    mdp: &TabularMdp,
    policy: &StationaryPolicy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    collect_tagged(mdp, policy, n, seed, DomainTag::Target, "policy")
}

pub fn collect_tagged(
    mdp: &TabularMdp,
    policy: &StationaryPolicy,
    n: usize,
    seed: u64,
    tag: DomainTag,
    behavior_policy_id: &str,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset size must be at least 1".into(),
        ));
    }
    if !policy.matches(mdp) {
        return Err(Error::ShapeMismatch(
            "policy shape does not match the MDP".into(),
        ));
    }
    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[rng::labels::COLLECT, i as u64]);
            let mut state = rng::sample_categorical(&mut r, mdp.initial_dist().as_slice().unwrap());
            let mut steps = Vec::with_capacity(mdp.horizon());
            for t in 0..mdp.horizon() {
                let action = rng::sample_categorical(&mut r, policy.action_probs(t, state));
                let reward = mdp.reward()[[state, action]];
                steps.push((state, action, reward));
                let row: Vec<f64> = (0..mdp.num_states())
                    .map(|sj| mdp.transition()[[state, action, sj]])
                    .collect();
                state = rng::sample_categorical(&mut r, &row);
            }
            let mut traj = Trajectory {
                steps,
                rtg: Vec::new(),
                domain_tag: tag,
            };
            traj.recompute_rtg();
            traj
        })
        .collect();
    Dataset::new(
        trajectories,
        mdp.fingerprint(),
        behavior_policy_id.to_string(),
        seed,
    )
}

/// Length-k window of a trajectory with rtg re-anchored at the window's
/// terminal index and recomputed backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedWindow {
    pub start: usize,
    pub steps: Vec<(usize, usize, f64)>,
    pub rtg: Vec<f64>,
}

/// Consistent-return slicing: one window per start index, each anchored
/// at the parent trajectory's (possibly augmented) rtg at the window's
/// last step, with earlier entries rebuilt from realized rewards so that
/// rtg[i] = r[i] + rtg[i+1] holds inside every window.
pub fn consistent_return_slices(traj: &Trajectory, k: usize) -> Result<Vec<SlicedWindow>> {
    let h = traj.horizon();
    if k == 0 || k > h {
        return Err(Error::InvalidArgument(format!(
            "window length {k} out of range 1..={h}"
        )));
    }
    let mut out = Vec::with_capacity(h - k + 1);
    for start in 0..=(h - k) {
        let steps: Vec<(usize, usize, f64)> = traj.steps[start..start + k].to_vec();
        let mut rtg = vec![0.0; k];
        rtg[k - 1] = traj.rtg[start + k - 1];
        for i in (0..k - 1).rev() {
            rtg[i] = steps[i].2 + rtg[i + 1];
        }
        out.push(SlicedWindow { start, steps, rtg });
    }
    Ok(out)
}

/// Concatenate target-first then source, then apply a seeded shuffle.
/// Per-trajectory domain tags are preserved.
pub fn mix(target_ds: &Dataset, source_ds: &Dataset, seed: u64) -> Result<Dataset> {
    if !target_ds.is_empty()
        && !source_ds.is_empty()
        && target_ds.horizon() != source_ds.horizon()
    {
        return Err(Error::ShapeMismatch(
            "cannot mix datasets with different horizons".into(),
        ));
    }
    let mut trajectories: Vec<Trajectory> = target_ds
        .trajectories
        .iter()
        .chain(source_ds.trajectories.iter())
        .cloned()
        .collect();
    // Fisher-Yates with a derived stream; recorded via the dataset seed.
    let mut r = rng::stream(seed, &[rng::labels::MATRIX, 0x313]);
    use rand::Rng;
    for i in (1..trajectories.len()).rev() {
        let j = r.random_range(0..=i);
        trajectories.swap(i, j);
    }
    Dataset::new(
        trajectories,
        target_ds.mdp_fingerprint.clone(),
        format!(
            "mix({},{})",
            target_ds.behavior_policy_id, source_ds.behavior_policy_id
        ),
        seed,
    )
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    #[serde(default)]
    tool_version: String,
    mdp_fingerprint: String,
    behavior_policy_id: String,
    seed: u64,
    num_trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi_params: Option<serde_json::Value>,
}

/// JSON-lines persistence: a metadata header line followed by one
/// trajectory per line.
pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    save_with_psi(dataset, path, None, None)
}

pub fn save_with_psi(
    dataset: &Dataset,
    path: &Path,
    psi_kind: Option<String>,
    psi_params: Option<serde_json::Value>,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        tool_version: crate::TOOL_VERSION.to_string(),
        mdp_fingerprint: dataset.mdp_fingerprint.clone(),
        behavior_policy_id: dataset.behavior_policy_id.clone(),
        seed: dataset.seed,
        num_trajectories: dataset.len(),
        psi_kind,
        psi_params,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for traj in &dataset.trajectories {
        serde_json::to_writer(&mut w, traj)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub struct LoadedDataset {
    pub dataset: Dataset,
    pub psi_kind: Option<String>,
    pub psi_params: Option<serde_json::Value>,
    /// set when the header fingerprint disagrees with `expect_fingerprint`
    pub fingerprint_warning: Option<String>,
}

pub fn load(path: &Path) -> Result<LoadedDataset> {
    load_expecting(path, None)
}

pub fn load_expecting(path: &Path, expect_fingerprint: Option<&str>) -> Result<LoadedDataset> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines.next().ok_or_else(|| Error::MalformedFile {
        path: path.display().to_string(),
        reason: "empty file".into(),
    })??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("bad header: {e}"),
        })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("unsupported format version {}", header.format_version),
        });
    }
    let mut trajectories = Vec::with_capacity(header.num_trajectories);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!("bad trajectory line: {e}"),
        })?;
        trajectories.push(traj);
    }
    if trajectories.len() != header.num_trajectories {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: format!(
                "header declares {} trajectories, found {}",
                header.num_trajectories,
                trajectories.len()
            ),
        });
    }
    let fingerprint_warning = expect_fingerprint.and_then(|fp| {
        (fp != header.mdp_fingerprint).then(|| {
            format!(
                "dataset fingerprint {} does not match expected {}",
                header.mdp_fingerprint, fp
            )
        })
    });
    Ok(LoadedDataset {
        dataset: Dataset::new(
            trajectories,
            header.mdp_fingerprint,
            header.behavior_policy_id,
            header.seed,
        )?,
        psi_kind: header.psi_kind,
        psi_params: header.psi_params,
        fingerprint_warning,
    })
}
