//! Acceptance suite: one test per shipped criterion, each printing a
//! PASS line with its measured margin. Tolerances are pinned in code.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use radt_core::augment::{
    exact_dp_stats, psi_exact_cdf, psi_mean_variance, pushforward_table, ClipConfig,
};
use radt_core::classifiers::{
    bayes_classifier_oracle, bce_grad, bce_loss, data_support, delta_r, dynamics_support,
    train_classifiers, transitions_of, FeatureKind, LogisticModel, TrainConfig,
};
use radt_core::config::ExperimentConfig;
use radt_core::data::{collect_tagged, consistent_return_slices, DomainTag, Trajectory};
use radt_core::envs;
use radt_core::eval::{pooled_se, rate_study, run_matrix, summarize, MethodSummary};
use radt_core::mdp::{joint_occupancy, rtg_table, StationaryPolicy, TabularMdp};
use radt_core::rng;
use radt_core::shift::{apply_shift, ShiftKind, ShiftSpec};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn chain_pair(magnitude: f64) -> (TabularMdp, TabularMdp) {
    let target = envs::chain_walk(5, 5, 0.9).unwrap();
    let source = apply_shift(
        &target,
        &ShiftSpec {
            kind: ShiftKind::TransitionPerturb,
            magnitude,
            seed: 7,
        },
    )
    .unwrap();
    (source, target)
}

/// Criterion 1: with a shared behavior policy, the infinite-data
/// conditioned policy computed from the CDF-matched pushforward of the
/// source occupancy equals the target one at every covered (t, s, f),
/// across three distinct environment/shift pairs.
#[test]
fn criterion_01_exact_transform_policy_equivalence() {
    let start = Instant::now();
    let pairs: Vec<(TabularMdp, ShiftSpec)> = vec![
        (
            envs::chain_walk(5, 5, 0.9).unwrap(),
            ShiftSpec {
                kind: ShiftKind::TransitionPerturb,
                magnitude: 0.5,
                seed: 7,
            },
        ),
        (
            envs::chain_walk(4, 6, 0.8).unwrap(),
            ShiftSpec {
                kind: ShiftKind::ActionNoise,
                magnitude: 0.7,
                seed: 3,
            },
        ),
        (
            envs::random_mdp(6, 3, 5, 11, 2, 0.5).unwrap(),
            ShiftSpec {
                kind: ShiftKind::ActionRestrict,
                magnitude: 0.6,
                seed: 1,
            },
        ),
    ];
    let mut worst = 0.0f64;
    let mut cells = 0usize;
    for (target, shift) in &pairs {
        let source = apply_shift(target, shift).unwrap();
        let beta = StationaryPolicy::uniform(target);
        let src_joint = joint_occupancy(&source, &beta).unwrap();
        let tgt_joint = joint_occupancy(target, &beta).unwrap();
        let pushed_rtg = pushforward_table(src_joint.rtg(), tgt_joint.rtg());
        let pushed_joint = src_joint.with_rtg(pushed_rtg);
        for t in 0..target.horizon() {
            for s in 0..target.num_states() {
                let mut covered = pushed_joint.covered_returns(t, s);
                covered.extend(tgt_joint.covered_returns(t, s));
                covered.sort_unstable();
                covered.dedup();
                for k in covered {
                    let pushed = pushed_joint.action_given_return(t, s, k);
                    let exact = tgt_joint.action_given_return(t, s, k);
                    if let (Some(p), Some(e)) = (pushed, exact) {
                        cells += 1;
                        for (pa, ea) in p.iter().zip(&e) {
                            worst = worst.max((pa - ea).abs());
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(cells > 100, "only {cells} covered cells compared");
    assert!(
        worst <= 1e-9,
        "max conditioned-policy difference {worst} over {cells} cells"
    );
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: exact-transform policy equivalence, max diff {worst:.3e} over {cells} cells in {elapsed:?}"
    );
}

/// Two-state, two-action pair with all transition probabilities in
/// [0.4, 0.6] in both domains, so the trained-classifier tolerance is
/// honest at 10^4 transitions per class.
fn moderate_pair() -> (TabularMdp, TabularMdp) {
    let build = |rows: [[f64; 2]; 4]| {
        let mut t = Array3::<f64>::zeros((2, 2, 2));
        for s in 0..2 {
            for a in 0..2 {
                t[[s, a, 0]] = rows[s * 2 + a][0];
                t[[s, a, 1]] = rows[s * 2 + a][1];
            }
        }
        TabularMdp::new(
            4,
            t,
            Array2::zeros((2, 2)),
            Array1::from_vec(vec![0.5, 0.5]),
            1.0,
        )
        .unwrap()
    };
    let target = build([[0.6, 0.4], [0.45, 0.55], [0.4, 0.6], [0.55, 0.45]]);
    let source = build([[0.45, 0.55], [0.6, 0.4], [0.55, 0.45], [0.42, 0.58]]);
    (source, target)
}

/// Criterion 2: at the Bayes optimum the classifier difference recovers
/// the log dynamics ratio to 1e-9; trained on 10^4 balanced transitions
/// it stays within 0.1 everywhere.
#[test]
fn criterion_02_dara_identity() {
    let start = Instant::now();

    // Bayes side, on the chain-walk pair
    let (source, target) = chain_pair(0.5);
    let vis = Array2::from_elem((5, 2), 0.1);
    let (sas, sa) = bayes_classifier_oracle(&source, &target, &vis).unwrap();
    let support = dynamics_support(&source, &target);
    let dr = delta_r(&sas, &sa, 50.0, Some(&support)).unwrap();
    let mut bayes_worst = 0.0f64;
    for s in 0..5 {
        for a in 0..2 {
            for s2 in 0..5 {
                let pt = target.transition()[[s, a, s2]];
                let ps = source.transition()[[s, a, s2]];
                if pt > 0.0 && ps > 0.0 {
                    bayes_worst = bayes_worst.max((dr.values[[s, a, s2]] - (pt / ps).ln()).abs());
                }
            }
        }
    }
    assert!(bayes_worst <= 1e-9, "Bayes identity off by {bayes_worst}");

    // trained side: 10^4 transitions per class on the moderate pair
    let (source, target) = moderate_pair();
    let beta = StationaryPolicy::uniform(&target);
    // horizon 4 gives 3 transitions per trajectory
    let src_ds = collect_tagged(&source, &beta, 3334, 101, DomainTag::Source, "uniform").unwrap();
    let tgt_ds = collect_tagged(&target, &beta, 3334, 102, DomainTag::Target, "uniform").unwrap();
    let cfg = TrainConfig {
        epochs: 1500,
        lr: 1.0,
        l2: 0.0,
        ..TrainConfig::default()
    };
    let (sas, sa) = train_classifiers(&src_ds, &tgt_ds, &cfg).unwrap();
    let mask = data_support(&src_ds, &tgt_ds, 2, 2);
    let trained = delta_r(&sas, &sa, 50.0, Some(&mask)).unwrap();
    let mut trained_worst = 0.0f64;
    for s in 0..2 {
        for a in 0..2 {
            for s2 in 0..2 {
                let pt = target.transition()[[s, a, s2]];
                let ps = source.transition()[[s, a, s2]];
                trained_worst = trained_worst.max((trained.values[[s, a, s2]] - (pt / ps).ln()).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(
        trained_worst <= 0.1,
        "trained log-ratio error {trained_worst} exceeds 0.1"
    );
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: Bayes identity {bayes_worst:.3e}, trained error {trained_worst:.4} in {elapsed:?}"
    );
}

/// Criterion 3: mean-variance transform with exact stats and a wide clip
/// matches target moments per (t,s,a) within 3 Monte Carlo standard
/// errors at n = 10^5 (the clip floor binds only where sigma_tgt = 0,
/// where the transform's exact std is theta_lo * sigma_src).
#[test]
fn criterion_03_mv_moment_matching() {
    let start = Instant::now();
    let (source, target) = chain_pair(0.5);
    let beta = StationaryPolicy::uniform(&source);
    let ds = collect_tagged(&source, &beta, 100_000, 201, DomainTag::Source, "uniform").unwrap();
    let src_stats = exact_dp_stats(&source, &beta).unwrap();
    let tgt_stats = exact_dp_stats(&target, &beta).unwrap();
    let clip = ClipConfig::wide();
    let aug = psi_mean_variance(&ds, &src_stats, &tgt_stats, &clip).unwrap();

    let mut groups: std::collections::HashMap<(usize, usize, usize), Vec<f64>> =
        std::collections::HashMap::new();
    for traj in aug.dataset().trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            groups.entry((t, s, a)).or_default().push(traj.rtg[t]);
        }
    }
    let mut checked = 0usize;
    for ((t, s, a), values) in groups {
        let c = values.len();
        if c < 100 {
            continue;
        }
        checked += 1;
        let n = c as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let mu_t = tgt_stats.mu[[t, s, a]];
        let sd_t = tgt_stats.sigma[[t, s, a]];
        let sd_s = src_stats.sigma[[t, s, a]];
        let rho = (sd_t / sd_s.max(clip.sigma_floor)).clamp(clip.theta_lo, clip.theta_hi);
        let exact_sd = rho * sd_s;
        let se_mean = exact_sd.max(1e-9) / n.sqrt();
        assert!(
            (mean - mu_t).abs() <= 3.0 * se_mean + 1e-9,
            "(t={t},s={s},a={a}) mean {mean} vs {mu_t} (se {se_mean})"
        );
        let m4 = values.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let se_sd = if sd > 0.0 {
            ((m4 - var * var).max(0.0) / n).sqrt() / (2.0 * sd)
        } else {
            0.0
        };
        // exact_sd equals sigma_tgt wherever the wide clip is inactive
        assert!(
            (sd - exact_sd).abs() <= 3.0 * se_sd + 1e-6,
            "(t={t},s={s},a={a}) sd {sd} vs exact {exact_sd} (target {sd_t})"
        );
    }
    let elapsed = start.elapsed();
    assert!(checked >= 20, "only {checked} cells had enough samples");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("ACCEPTANCE 3 PASS: MV moments matched on {checked} cells in {elapsed:?}");
}

/// Criterion 4: chi-squared goodness of fit of the CDF-transformed
/// source returns against the exact target law, per (t,s,a), not
/// rejected at alpha = 0.001 in at least 95% of testable cells.
#[test]
fn criterion_04_cdf_transform_distributional_correctness() {
    let start = Instant::now();
    // longer horizon gives richer return laws, so most cells carry
    // enough distinct atoms for a valid test
    let target = envs::chain_walk(5, 8, 0.9).unwrap();
    let source = apply_shift(
        &target,
        &ShiftSpec {
            kind: ShiftKind::TransitionPerturb,
            magnitude: 0.5,
            seed: 7,
        },
    )
    .unwrap();
    let beta = StationaryPolicy::uniform(&source);
    let ds = collect_tagged(&source, &beta, 100_000, 301, DomainTag::Source, "uniform").unwrap();
    let src_table = rtg_table(&source, &beta).unwrap();
    let tgt_table = rtg_table(&target, &beta).unwrap();
    let aug = psi_exact_cdf(&ds, &src_table, &tgt_table, 77).unwrap();

    let mut groups: std::collections::HashMap<(usize, usize, usize), Vec<i64>> =
        std::collections::HashMap::new();
    for traj in aug.dataset().trajectories() {
        for (t, &(s, a, _)) in traj.steps.iter().enumerate() {
            groups
                .entry((t, s, a))
                .or_default()
                .push(traj.rtg[t].round() as i64);
        }
    }
    let mut tested = 0usize;
    let mut passed = 0usize;
    for ((t, s, a), ks) in groups {
        let n = ks.len();
        if n < 250 {
            continue;
        }
        let d = tgt_table.get(t, s, a);
        // pool atoms with expected count < 5 into one bin
        let mut stat = 0.0;
        let mut bins = 0i64;
        let mut pooled_expected = 0.0;
        let mut pooled_observed = 0.0;
        for (i, &k) in d.offsets().iter().enumerate() {
            let expected = d.mass()[i] * n as f64;
            let observed = ks.iter().filter(|&&x| x == k).count() as f64;
            if expected >= 5.0 {
                stat += (observed - expected).powi(2) / expected;
                bins += 1;
            } else {
                pooled_expected += expected;
                pooled_observed += observed;
            }
        }
        if pooled_expected >= 5.0 {
            stat += (pooled_observed - pooled_expected).powi(2) / pooled_expected;
            bins += 1;
        }
        if bins < 2 {
            continue;
        }
        tested += 1;
        let chi = ChiSquared::new((bins - 1) as f64).unwrap();
        if 1.0 - chi.cdf(stat) > 0.001 {
            passed += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(tested >= 20, "only {tested} cells testable");
    let frac = passed as f64 / tested as f64;
    assert!(
        frac >= 0.95,
        "chi-squared accepted in only {passed}/{tested} cells"
    );
    println!(
        "ACCEPTANCE 4 PASS: chi-squared accepted in {passed}/{tested} cells ({:.1}%) in {elapsed:?}",
        100.0 * frac
    );
}

fn find<'a>(summary: &'a [MethodSummary], name: &str) -> &'a MethodSummary {
    summary
        .iter()
        .find(|m| m.method == name)
        .unwrap_or_else(|| panic!("missing method {name}"))
}

/// Criterion 5: on the shipped chain-walk benchmark the return-augmented
/// methods beat plain mixing: exact-CDF >= MV >= identity with the ends
/// separated by 2 pooled SE, and the classifier route beats identity by
/// 1 pooled SE.
#[test]
fn criterion_05_directional_benchmark() {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&config_path("chainwalk_benchmark.toml")).unwrap();
    let spec = cfg.matrix_spec(None).unwrap();
    let results = run_matrix(&spec);
    let cells: Vec<_> = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("all cells run");
    let summary = summarize(&cells);
    let cdf = find(&summary, "radt_exact_cdf");
    let mv = find(&summary, "radt_mv");
    let dara = find(&summary, "radt_dara");
    let ident = find(&summary, "1t10s_dt");
    let elapsed = start.elapsed();
    assert!(
        cdf.mean_return >= mv.mean_return && mv.mean_return >= ident.mean_return,
        "ordering violated: cdf {} mv {} identity {}",
        cdf.mean_return,
        mv.mean_return,
        ident.mean_return
    );
    let gap = cdf.mean_return - ident.mean_return;
    let need = 2.0 * pooled_se(cdf, ident);
    assert!(gap >= need, "cdf - identity = {gap} < 2 pooled SE {need}");
    let dara_gap = dara.mean_return - ident.mean_return;
    let dara_need = pooled_se(dara, ident);
    assert!(
        dara_gap >= dara_need,
        "dara - identity = {dara_gap} < 1 pooled SE {dara_need}"
    );
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 5 PASS: cdf {:.4} >= mv {:.4} >= identity {:.4} (gap {gap:.4} >= {need:.4}); dara gap {dara_gap:.4} >= {dara_need:.4}; {elapsed:?}",
        cdf.mean_return, mv.mean_return, ident.mean_return
    );
}

/// Criterion 6: with identical dynamics every augmented variant stays
/// within 3 pooled SE of identity mixing.
#[test]
fn criterion_06_no_shift_null() {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&config_path("zero_shift.toml")).unwrap();
    let spec = cfg.matrix_spec(None).unwrap();
    let results = run_matrix(&spec);
    let cells: Vec<_> = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("all cells run");
    let summary = summarize(&cells);
    let ident = find(&summary, "1t10s_dt");
    for name in ["radt_dara", "radt_mv", "radt_mv_empirical", "radt_exact_cdf"] {
        let m = find(&summary, name);
        let diff = (m.mean_return - ident.mean_return).abs();
        let bound = 3.0 * pooled_se(m, ident);
        assert!(
            diff <= bound + 1e-12,
            "{name} differs from identity by {diff} > 3 pooled SE {bound}"
        );
    }
    let elapsed = start.elapsed();
    println!("ACCEPTANCE 6 PASS: no-shift null holds for all variants in {elapsed:?}");
}

/// Criterion 7: median suboptimality of the exact-CDF method is
/// non-increasing over the shipped sample-size grid; the fitted log-log
/// slope is reported, not asserted.
#[test]
fn criterion_07_sample_size_monotonicity() {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&config_path("rate_study.toml")).unwrap();
    let spec = cfg.matrix_spec(None).unwrap();
    let study = rate_study(&spec, &cfg.run.n_grid).unwrap();
    let meds: Vec<f64> = study.points.iter().map(|p| p.median_suboptimality).collect();
    for w in meds.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-12,
            "medians not non-increasing: {meds:?}"
        );
    }
    assert!(study.log_log_slope.is_finite());
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 7 PASS: medians {meds:?}, log-log slope {:.4} in {elapsed:?}",
        study.log_log_slope
    );
}

/// Criterion 8: consistent-return windows satisfy the recurrence and the
/// terminal anchor on 10^3 random (trajectory, window-length) pairs.
#[test]
fn criterion_08_consistent_return_property() {
    let start = Instant::now();
    let mut r = rng::stream(4242, &[8]);
    use rand::Rng;
    for case in 0..1000 {
        let h = r.random_range(1..12usize);
        let k = r.random_range(1..=h);
        let steps: Vec<(usize, usize, f64)> = (0..h)
            .map(|_| {
                (
                    r.random_range(0..4usize),
                    r.random_range(0..3usize),
                    r.random_range(-5i64..6) as f64 * 0.5,
                )
            })
            .collect();
        // rtg deliberately inconsistent with the rewards, as after an
        // augmentation transform
        let rtg: Vec<f64> = (0..h).map(|_| r.random_range(-20i64..20) as f64 * 0.25).collect();
        let traj = Trajectory {
            steps,
            rtg,
            domain_tag: DomainTag::Source,
        };
        let windows = consistent_return_slices(&traj, k).unwrap();
        assert_eq!(windows.len(), h - k + 1, "case {case}");
        for w in windows {
            assert_eq!(w.rtg[k - 1], traj.rtg[w.start + k - 1], "case {case}");
            for i in 0..k - 1 {
                assert_eq!(w.rtg[i], w.steps[i].2 + w.rtg[i + 1], "case {case}");
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("ACCEPTANCE 8 PASS: 1000 window cases consistent in {elapsed:?}");
}

/// Criterion 9: analytic gradients match central finite differences
/// within 1e-4 relative at random points, and every DP return
/// distribution normalizes to within 1e-10.
#[test]
fn criterion_09_numerical_hygiene() {
    let start = Instant::now();
    use rand::Rng;

    // logistic gradient
    let (source, target) = chain_pair(0.5);
    let beta = StationaryPolicy::uniform(&source);
    let src = collect_tagged(&source, &beta, 40, 1, DomainTag::Source, "uniform").unwrap();
    let tgt = collect_tagged(&target, &beta, 40, 2, DomainTag::Target, "uniform").unwrap();
    let mut samples = transitions_of(&src, 0);
    samples.extend(transitions_of(&tgt, 1));
    let mut model = LogisticModel::zeros(FeatureKind::Sas, 5, 2);
    let mut r = rng::stream(9, &[1]);
    for w in &mut model.weights {
        *w = r.random_range(-1.0..1.0);
    }
    model.bias = r.random_range(-0.5..0.5);
    let cw = [1.0, 1.0];
    let l2 = 1e-3;
    let grad = bce_grad(&model, &samples, cw, l2);
    let h = 1e-5;
    let mut logistic_worst = 0.0f64;
    for _ in 0..10 {
        let idx = r.random_range(0..grad.len());
        let mut plus = model.clone();
        let mut minus = model.clone();
        if idx < model.weights.len() {
            plus.weights[idx] += h;
            minus.weights[idx] -= h;
        } else {
            plus.bias += h;
            minus.bias -= h;
        }
        let num = (bce_loss(&plus, &samples, cw, l2) - bce_loss(&minus, &samples, cw, l2)) / (2.0 * h);
        let rel = (num - grad[idx]).abs() / num.abs().max(grad[idx].abs()).max(1e-12);
        logistic_worst = logistic_worst.max(rel);
    }
    assert!(logistic_worst <= 1e-4, "logistic gradient rel err {logistic_worst}");

    // neural gradient
    let ds = radt_core::data::collect(&target, &beta, 30, 5).unwrap();
    let cfg = radt_core::rcsl::NeuralTrainConfig {
        hidden: 12,
        epochs: 0,
        ..Default::default()
    };
    let mut policy = radt_core::rcsl::fit_neural(&ds, &cfg).unwrap();
    let mut params = policy.params();
    for p in &mut params {
        *p = r.random_range(-0.8..0.8);
    }
    policy.set_params(&params);
    let nn_samples: Vec<(usize, f64, usize)> = ds
        .trajectories()
        .iter()
        .flat_map(|traj| {
            traj.steps
                .iter()
                .enumerate()
                .map(|(t, &(s, a, _))| (s, traj.rtg[t], a))
                .collect::<Vec<_>>()
        })
        .collect();
    let ngrad = radt_core::rcsl::neural_grad(&policy, &nn_samples);
    let mut neural_worst = 0.0f64;
    for _ in 0..10 {
        let idx = r.random_range(0..params.len());
        let mut pp = params.clone();
        let mut plus = policy.clone();
        let mut minus = policy.clone();
        pp[idx] += h;
        plus.set_params(&pp);
        pp[idx] -= 2.0 * h;
        minus.set_params(&pp);
        let num = (radt_core::rcsl::neural_nll(&plus, &nn_samples)
            - radt_core::rcsl::neural_nll(&minus, &nn_samples))
            / (2.0 * h);
        let rel = (num - ngrad[idx]).abs() / num.abs().max(ngrad[idx].abs()).max(1e-10);
        neural_worst = neural_worst.max(rel);
    }
    assert!(neural_worst <= 1e-4, "neural gradient rel err {neural_worst}");

    // DP distribution normalization
    let mut norm_worst = 0.0f64;
    for (mdp, pol) in [
        (&target, StationaryPolicy::uniform(&target)),
        (&source, StationaryPolicy::uniform(&source)),
    ] {
        let table = rtg_table(mdp, &pol).unwrap();
        for d in table.dists() {
            norm_worst = norm_worst.max((d.total_mass() - 1.0).abs());
        }
    }
    let big = envs::random_mdp(6, 3, 8, 17, 4, 0.25).unwrap();
    let table = rtg_table(&big, &StationaryPolicy::uniform(&big)).unwrap();
    for d in table.dists() {
        norm_worst = norm_worst.max((d.total_mass() - 1.0).abs());
    }
    assert!(norm_worst <= 1e-10, "distribution normalization off by {norm_worst}");

    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 9 PASS: gradient rel errs logistic {logistic_worst:.2e} / neural {neural_worst:.2e}, normalization {norm_worst:.2e} in {elapsed:?}"
    );
}

/// Criterion 10: two runs of the shipped demo experiment produce
/// byte-identical report files.
#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_radt-lab");
    let config = config_path("chainwalk_benchmark.toml");
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        let status = std::process::Command::new(bin)
            .args([
                "experiment",
                "--config",
                config.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .expect("binary runs");
        assert!(status.success());
        (
            std::fs::read(out.join("reports/matrix.csv")).unwrap(),
            std::fs::read(out.join("reports/summary.json")).unwrap(),
        )
    };
    let (csv_a, sum_a) = run("a");
    let (csv_b, sum_b) = run("b");
    assert_eq!(csv_a, csv_b, "matrix.csv differs between runs");
    assert_eq!(sum_a, sum_b, "summary.json differs between runs");
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 10 PASS: byte-identical reports ({} bytes) in {elapsed:?}",
        csv_a.len()
    );
}
