//! Command-line front end: build environments, collect data, train
//! classifiers, augment, fit, evaluate, and run full experiment matrices
//! from a single config file.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{self, PsiKind, StatsEstimator};
use crate::classifiers::{self, LogisticModel, TrainConfig};
use crate::config::ExperimentConfig;
use crate::data::{self, DomainTag};
use crate::envs::BehaviorSpec;
use crate::error::{Error, Result};
use crate::eval::{self, CellReport, MatrixSpec};
use crate::mdp::{rtg_table, value_iteration, TabularMdp};
use crate::rcsl::{fit_neural, fit_tabular, NeuralTrainConfig, ReturnBinner, TabularRcslPolicy};
use crate::shift::apply_shift;
use crate::TOOL_VERSION;

/// Root seed override honored by every subcommand.
pub const SEED_ENV_VAR: &str = "RADT_LAB_SEED";

#[derive(Parser)]
#[command(
    name = "radt-lab",
    version,
    about = "Off-dynamics return-conditioned supervised learning lab on tabular MDPs"
)]
pub struct Cli {
    /// Cap on worker threads (0 = available cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the target and shifted source MDPs from a config file
    MakeEnv(MakeEnvArgs),
    /// Roll out a behavior policy into a JSON-lines dataset
    Collect(CollectArgs),
    /// Train the source-vs-target classifier pair on two datasets
    TrainClassifiers(TrainClassifiersArgs),
    /// Rewrite a dataset's returns-to-go with a transform
    Augment(AugmentArgs),
    /// Fit a return-conditioned policy on a dataset
    Fit(FitArgs),
    /// Evaluate a fitted policy in a target MDP
    Eval(EvalArgs),
    /// Run the full method-by-seed experiment matrix from a config
    Experiment(ExperimentArgs),
    /// Sample-size trend study from a config
    RateStudy(ExperimentArgs),
    /// Print a summary of any artifact file
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct MakeEnvArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct CollectArgs {
    /// Path to an MDP JSON document
    #[arg(long)]
    pub mdp: PathBuf,
    /// Behavior policy: uniform | epsilon_greedy:<eps>
    #[arg(long, default_value = "uniform")]
    pub behavior: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Domain tag recorded on every trajectory: source | target
    #[arg(long, default_value = "target")]
    pub domain: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainClassifiersArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().l2)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AugmentArgs {
    /// identity | dara | mv | mv-empirical | exact-cdf
    #[arg(long)]
    pub kind: String,
    /// Source dataset to transform
    #[arg(long)]
    pub dataset: PathBuf,
    /// Classifier pair JSON (dara)
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, default_value_t = augment::DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = augment::DEFAULT_DR_CLAMP)]
    pub dr_clamp: f64,
    /// Target-domain dataset (mv stats)
    #[arg(long)]
    pub target_dataset: Option<PathBuf>,
    /// exact_dp | fitted_value | trajectory_empirical (mv)
    #[arg(long, default_value = "fitted_value")]
    pub estimator: String,
    #[arg(long, default_value_t = augment::DEFAULT_CLIP_LO)]
    pub clip_lo: f64,
    #[arg(long, default_value_t = augment::DEFAULT_CLIP_HI)]
    pub clip_hi: f64,
    #[arg(long, default_value_t = augment::DEFAULT_SIGMA_FLOOR)]
    pub sigma_floor: f64,
    #[arg(long, default_value_t = 32)]
    pub n_action_samples: usize,
    #[arg(long, default_value_t = augment::DEFAULT_SOFTMAX_TEMP)]
    pub softmax_temp: f64,
    /// Source MDP JSON (exact-cdf, or mv with exact_dp stats)
    #[arg(long)]
    pub source_mdp: Option<PathBuf>,
    /// Target MDP JSON (exact-cdf, or mv with exact_dp stats)
    #[arg(long)]
    pub target_mdp: Option<PathBuf>,
    /// Behavior policy the distributions condition on (exact-cdf / exact_dp)
    #[arg(long, default_value = "uniform")]
    pub behavior: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// tabular | neural
    #[arg(long, default_value = "tabular")]
    pub learner: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// 0 = infer from the data grid (width 1 bins around integers)
    #[arg(long, default_value_t = 0.0)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Fitted policy JSON
    #[arg(long)]
    pub policy: PathBuf,
    /// Target MDP JSON
    #[arg(long)]
    pub mdp: PathBuf,
    /// Comma-separated conditioning targets, or `auto` (quantiles of --dataset)
    #[arg(long, default_value = "auto")]
    pub f_grid: String,
    /// Dataset used for the auto grid
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides run.output_dir from the config
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub path: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if cli.jobs > 0 {
        init_pool(cli.jobs);
    }
    let result = match cli.command {
        Command::MakeEnv(args) => make_env(args),
        Command::Collect(args) => collect(args),
        Command::TrainClassifiers(args) => train_classifiers(args),
        Command::Augment(args) => augment_cmd(args),
        Command::Fit(args) => fit(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Experiment(args) => experiment(args),
        Command::RateStudy(args) => rate_study(args),
        Command::Inspect(args) => inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                3
            }
        }
    }
}

/// Cap the rayon pool; ignores failure since the global pool can only
/// be built once per process.
fn init_pool(jobs: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global();
}

fn env_seed_override() -> Option<u64> {
    std::env::var(SEED_ENV_VAR).ok().and_then(|v| v.parse().ok())
}

fn parse_behavior(text: &str) -> Result<BehaviorSpec> {
    if text == "uniform" {
        return Ok(BehaviorSpec::Uniform);
    }
    if let Some(eps) = text.strip_prefix("epsilon_greedy:") {
        let epsilon: f64 = eps.parse().map_err(|_| Error::Config {
            key: "behavior".into(),
            reason: format!("bad epsilon `{eps}`"),
        })?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config {
                key: "behavior".into(),
                reason: format!("epsilon {epsilon} outside [0, 1]"),
            });
        }
        return Ok(BehaviorSpec::EpsilonGreedy { epsilon });
    }
    Err(Error::Config {
        key: "behavior".into(),
        reason: format!("unknown behavior policy `{text}` (uniform | epsilon_greedy:<eps>)"),
    })
}

fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path)?;
    TabularMdp::from_json(&text).map_err(|e| match e {
        Error::MalformedFile { reason, .. } => Error::MalformedFile {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn make_env(args: MakeEnvArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    cfg.validate()?;
    let target = cfg.env.build()?;
    let source = apply_shift(&target, &cfg.shift.build()?)?;
    let dir = args.out_dir.join("datasets");
    fs::create_dir_all(&dir)?;
    write_text(&dir.join("target.mdp.json"), &target.to_json())?;
    write_text(&dir.join("source.mdp.json"), &source.to_json())?;
    println!(
        "wrote {} (fingerprint {}) and {} (fingerprint {}) [config {} tool {}]",
        dir.join("target.mdp.json").display(),
        target.fingerprint(),
        dir.join("source.mdp.json").display(),
        source.fingerprint(),
        cfg.hash(),
        TOOL_VERSION,
    );
    Ok(())
}

fn collect(args: CollectArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::Config {
            key: "n".into(),
            reason: "must be at least 1".into(),
        });
    }
    let mdp = load_mdp(&args.mdp)?;
    let behavior = parse_behavior(&args.behavior)?;
    let policy = behavior.resolve(&mdp)?;
    let tag = match args.domain.as_str() {
        "source" => DomainTag::Source,
        "target" => DomainTag::Target,
        other => {
            return Err(Error::Config {
                key: "domain".into(),
                reason: format!("unknown domain `{other}`"),
            })
        }
    };
    let seed = env_seed_override().unwrap_or(args.seed);
    let ds = data::collect_tagged(&mdp, &policy, args.n, seed, tag, &behavior.id())?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    data::save(&ds, &args.out)?;
    println!("wrote {} ({} trajectories, seed {seed})", args.out.display(), ds.len());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ClassifierPairDoc {
    tool_version: String,
    sas: LogisticModel,
    sa: LogisticModel,
}

fn train_classifiers(args: TrainClassifiersArgs) -> Result<()> {
    let source = data::load(&args.source)?.dataset;
    let target = data::load(&args.target)?.dataset;
    let cfg = TrainConfig {
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        seed: env_seed_override().unwrap_or(args.seed),
        l2: args.l2,
    };
    let (sas, sa) = classifiers::train_classifiers(&source, &target, &cfg)?;
    let doc = ClassifierPairDoc {
        tool_version: TOOL_VERSION.to_string(),
        sas,
        sa,
    };
    write_text(&args.out, &serde_json::to_string(&doc)?)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn augment_cmd(args: AugmentArgs) -> Result<()> {
    let loaded = data::load(&args.dataset)?;
    let ds = loaded.dataset;
    let seed = env_seed_override().unwrap_or(args.seed);
    let behavior = parse_behavior(&args.behavior)?;
    let augmented = match args.kind.as_str() {
        "identity" => augment::augment(&ds, augment::PsiParams::Identity)?,
        "dara" => {
            let models_path = args.models.as_ref().ok_or_else(|| Error::Config {
                key: "models".into(),
                reason: "dara needs --models".into(),
            })?;
            let doc: ClassifierPairDoc = serde_json::from_str(&fs::read_to_string(models_path)?)?;
            let dr = classifiers::delta_r(&doc.sas, &doc.sa, args.dr_clamp, None)?;
            augment::psi_dara(&ds, &dr, args.eta)?
        }
        "mv" | "mv-empirical" => {
            let estimator = if args.kind == "mv-empirical" {
                StatsEstimator::TrajectoryEmpirical
            } else {
                match args.estimator.as_str() {
                    "exact_dp" => StatsEstimator::ExactDp,
                    "fitted_value" => StatsEstimator::FittedValue,
                    "trajectory_empirical" => StatsEstimator::TrajectoryEmpirical,
                    other => {
                        return Err(Error::Config {
                            key: "estimator".into(),
                            reason: format!("unknown estimator `{other}`"),
                        })
                    }
                }
            };
            let tgt_ds = match &args.target_dataset {
                Some(p) => Some(data::load(p)?.dataset),
                None => None,
            };
            let src_mdp = args.source_mdp.as_deref().map(load_mdp).transpose()?;
            let tgt_mdp = args.target_mdp.as_deref().map(load_mdp).transpose()?;
            let src_pol = src_mdp.as_ref().map(|m| behavior.resolve(m)).transpose()?;
            let tgt_pol = tgt_mdp.as_ref().map(|m| behavior.resolve(m)).transpose()?;
            let src_stats = augment::estimate_return_stats(
                estimator,
                Some(&ds),
                src_mdp.as_ref(),
                src_pol.as_ref(),
                args.n_action_samples,
                args.softmax_temp,
                seed,
                true,
            )?;
            let tgt_stats = augment::estimate_return_stats(
                estimator,
                tgt_ds.as_ref(),
                tgt_mdp.as_ref(),
                tgt_pol.as_ref(),
                args.n_action_samples,
                args.softmax_temp,
                seed ^ 1,
                true,
            )?;
            let clip = augment::ClipConfig {
                theta_lo: args.clip_lo,
                theta_hi: args.clip_hi,
                sigma_floor: args.sigma_floor,
            };
            let kind = if args.kind == "mv-empirical" {
                PsiKind::MeanVarianceEmpirical
            } else {
                PsiKind::MeanVariance
            };
            augment::psi_mean_variance_kind(&ds, &src_stats, &tgt_stats, &clip, kind)?
        }
        "exact-cdf" => {
            let src_mdp = load_mdp(args.source_mdp.as_deref().ok_or_else(|| Error::Config {
                key: "source_mdp".into(),
                reason: "exact-cdf needs --source-mdp".into(),
            })?)?;
            let tgt_mdp = load_mdp(args.target_mdp.as_deref().ok_or_else(|| Error::Config {
                key: "target_mdp".into(),
                reason: "exact-cdf needs --target-mdp".into(),
            })?)?;
            let src_table = rtg_table(&src_mdp, &behavior.resolve(&src_mdp)?)?;
            let tgt_table = rtg_table(&tgt_mdp, &behavior.resolve(&tgt_mdp)?)?;
            augment::psi_exact_cdf(&ds, &src_table, &tgt_table, seed)?
        }
        other => {
            return Err(Error::Config {
                key: "kind".into(),
                reason: format!("unknown transform `{other}`"),
            })
        }
    };
    let psi_kind = augmented.psi_kind.as_str().to_string();
    let params = augmented.params.clone();
    let diagnostics = serde_json::to_value(&augmented.diagnostics)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    data::save_with_psi(
        augmented.dataset(),
        &args.out,
        Some(psi_kind.clone()),
        Some(serde_json::json!({
            "params": params,
            "diagnostics": diagnostics,
            "tool_version": TOOL_VERSION,
        })),
    )?;
    println!("wrote {} (psi={psi_kind})", args.out.display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let ds = data::load(&args.dataset)?.dataset;
    let seed = env_seed_override().unwrap_or(args.seed);
    let text = match args.learner.as_str() {
        "tabular" => {
            let width = if args.bin_width > 0.0 { args.bin_width } else { 1.0 };
            let policy = fit_tabular(&ds, ReturnBinner::new(width, 0.0)?, args.alpha)?;
            policy.to_json()
        }
        "neural" => {
            let cfg = NeuralTrainConfig {
                hidden: args.hidden,
                lr: args.lr,
                epochs: args.epochs,
                batch: args.batch,
                seed,
            };
            let policy = fit_neural(&ds, &cfg)?;
            serde_json::to_string(&serde_json::json!({
                "kind": "neural",
                "policy": policy,
            }))?
        }
        other => {
            return Err(Error::Config {
                key: "learner".into(),
                reason: format!("unknown learner `{other}`"),
            })
        }
    };
    write_text(&args.out, &text)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_policy(path: &Path) -> Result<Box<dyn crate::rcsl::ConditionedPolicy + Sync>> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("tabular") => Ok(Box::new(TabularRcslPolicy::from_json(&text)?)),
        Some("neural") => {
            let policy: crate::rcsl::NeuralRcslPolicy =
                serde_json::from_value(value.get("policy").cloned().ok_or_else(|| {
                    Error::MalformedFile {
                        path: path.display().to_string(),
                        reason: "missing `policy` field".into(),
                    }
                })?)?;
            Ok(Box::new(policy))
        }
        _ => Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "unknown policy kind".into(),
        }),
    }
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let policy = load_policy(&args.policy)?;
    let mdp = load_mdp(&args.mdp)?;
    let f_grid: Vec<f64> = if args.f_grid == "auto" {
        let ds_path = args.dataset.as_ref().ok_or_else(|| Error::Config {
            key: "f_grid".into(),
            reason: "auto grid needs --dataset".into(),
        })?;
        let ds = data::load(ds_path)?.dataset;
        let mut grid: Vec<f64> = [0.5, 0.9, 1.0]
            .iter()
            .map(|&q| ds.return_quantile(q))
            .chain(std::iter::once(ds.max_return()))
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    } else {
        args.f_grid
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Config {
                    key: "f_grid".into(),
                    reason: format!("bad value `{tok}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?
    };
    let seed = env_seed_override().unwrap_or(args.seed);
    let report = eval::evaluate(policy.as_ref(), &mdp, &f_grid, args.rollouts, seed)?;
    write_text(&args.out, &serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", args.out.display());
    for row in &report.rows {
        println!(
            "f={} mc={}+-{} exact={} subopt={}",
            row.f, row.mc_mean, row.mc_se, row.exact, row.suboptimality
        );
    }
    Ok(())
}

pub const MATRIX_CSV_COLUMNS: [(&str, &str); 11] = [
    ("method", "matrix cell: 1t_dt, 10t_dt, 1t10s_dt, radt_dara, radt_mv, radt_mv_empirical, radt_exact_cdf"),
    ("replication_seed", "per-replication seed from run.seeds"),
    ("f", "conditioning target supplied at evaluation time"),
    ("mc_mean", "Monte Carlo mean return over eval.n_rollouts rollouts"),
    ("mc_se", "standard error of mc_mean"),
    ("exact_return", "exact expected return by product-chain DP"),
    ("suboptimality", "j_star - exact_return"),
    ("j_star", "exact optimal return of the target MDP"),
    ("psi_kind", "return transform applied to the source data"),
    ("config_hash", "FNV-1a of the canonical config"),
    ("tool_version", "crate version that produced the row"),
];

fn matrix_csv(cells: &[CellReport], config_hash: &str) -> String {
    let mut out = String::new();
    out.push_str(
        &MATRIX_CSV_COLUMNS
            .iter()
            .map(|(name, _)| *name)
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for cell in cells {
        for row in &cell.report.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.method,
                cell.replication_seed,
                row.f,
                row.mc_mean,
                row.mc_se,
                row.exact,
                row.suboptimality,
                cell.report.j_star,
                cell.report.psi_kind,
                config_hash,
                TOOL_VERSION,
            ));
        }
    }
    out
}

fn schema_json() -> String {
    let columns: Vec<serde_json::Value> = MATRIX_CSV_COLUMNS
        .iter()
        .map(|(name, desc)| serde_json::json!({ "name": name, "description": desc }))
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "columns": columns })).unwrap()
}

fn resolve_spec(args: &ExperimentArgs) -> Result<(ExperimentConfig, MatrixSpec, PathBuf)> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let spec = cfg.matrix_spec(env_seed_override())?;
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    Ok((cfg, spec, out_dir))
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let (cfg, spec, out_dir) = resolve_spec(&args)?;
    if cfg.run.jobs > 0 {
        init_pool(cfg.run.jobs);
    }
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir)?;
    let datasets_dir = out_dir.join("datasets");
    fs::create_dir_all(&datasets_dir)?;
    let models_dir = out_dir.join("models");
    fs::create_dir_all(&models_dir)?;

    // persist the environment pair alongside the reports
    let source = apply_shift(&spec.target, &spec.shift)?;
    write_text(&datasets_dir.join("target.mdp.json"), &spec.target.to_json())?;
    write_text(&datasets_dir.join("source.mdp.json"), &source.to_json())?;

    let results = eval::run_matrix(&spec);
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => failures.push(e),
        }
    }
    let config_hash = cfg.hash();
    write_text(&reports_dir.join("matrix.csv"), &matrix_csv(&cells, &config_hash))?;
    write_text(&reports_dir.join("schema.json"), &schema_json())?;
    let summary = eval::summarize(&cells);
    write_text(
        &reports_dir.join("summary.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash,
            "tool_version": TOOL_VERSION,
            "root_seed": spec.root_seed,
            "j_star": cells.first().map(|c| c.report.j_star),
            "methods": summary,
            "failures": failures,
        }))?,
    )?;
    println!(
        "wrote {} rows to {} [config {config_hash}]",
        cells.iter().map(|c| c.report.rows.len()).sum::<usize>(),
        reports_dir.join("matrix.csv").display()
    );
    for m in &summary {
        println!(
            "{}: mean_return={} se={} (n={})",
            m.method, m.mean_return, m.se, m.n_seeds
        );
    }
    if !failures.is_empty() {
        eprintln!("{} cell(s) failed; see summary.json", failures.len());
    }
    Ok(())
}

fn rate_study(args: ExperimentArgs) -> Result<()> {
    let (cfg, spec, out_dir) = resolve_spec(&args)?;
    if cfg.run.jobs > 0 {
        init_pool(cfg.run.jobs);
    }
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir)?;
    let study = eval::rate_study(&spec, &cfg.run.n_grid)?;
    let mut csv = String::from("total_n,n_target,n_source,median_suboptimality,mean_suboptimality\n");
    for p in &study.points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.total_n, p.n_target, p.n_source, p.median_suboptimality, p.mean_suboptimality
        ));
    }
    write_text(&reports_dir.join("rate_study.csv"), &csv)?;
    write_text(
        &reports_dir.join("rate_study.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": cfg.hash(),
            "tool_version": TOOL_VERSION,
            "root_seed": spec.root_seed,
            "study": study,
        }))?,
    )?;
    println!("log-log slope: {}", study.log_log_slope);
    for p in &study.points {
        println!("N={}: median subopt {}", p.total_n, p.median_suboptimality);
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let text = fs::read_to_string(&args.path)?;
    let first_line = text.lines().next().unwrap_or("");
    // dataset files are JSON-lines with a header; everything else is JSON
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(first_line) {
        if value.get("format_version").is_some() && value.get("num_trajectories").is_some() {
            let loaded = data::load(&args.path)?;
            let ds = &loaded.dataset;
            let (tgt, src) = ds.tag_counts();
            println!("dataset: {} trajectories (target {tgt}, source {src})", ds.len());
            println!("horizon: {}", ds.horizon());
            println!("mdp_fingerprint: {}", ds.mdp_fingerprint);
            println!("behavior_policy_id: {}", ds.behavior_policy_id);
            println!("seed: {}", ds.seed);
            if let Some(psi) = loaded.psi_kind {
                println!("psi_kind: {psi}");
            }
            if !ds.is_empty() {
                println!(
                    "returns: min {} median {} max {}",
                    ds.return_quantile(0.0),
                    ds.return_quantile(0.5),
                    ds.max_return()
                );
            }
            return Ok(());
        }
    }
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: args.path.display().to_string(),
        reason: e.to_string(),
    })?;
    if value.get("transition").is_some() {
        let mdp = TabularMdp::from_json(&text)?;
        let (_, j_star) = value_iteration(&mdp);
        println!(
            "mdp: {} states, {} actions, horizon {}, reward grid {}",
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon(),
            mdp.reward_grid()
        );
        println!("fingerprint: {}", mdp.fingerprint());
        println!("optimal return: {j_star}");
    } else if value.get("sas").is_some() {
        let doc: ClassifierPairDoc = serde_json::from_str(&text)?;
        println!(
            "classifier pair over {} states x {} actions (tool {})",
            doc.sas.num_states, doc.sas.num_actions, doc.tool_version
        );
        println!("max |sas logit|: {}", doc.sas.max_abs_logit());
        println!("max |sa logit|: {}", doc.sa.max_abs_logit());
    } else if value.get("kind").and_then(|k| k.as_str()) == Some("tabular") {
        let policy = TabularRcslPolicy::from_json(&text)?;
        println!("tabular policy: {} states, smoothing {}", policy.num_states(), policy.smoothing);
    } else if value.get("kind").and_then(|k| k.as_str()) == Some("neural") {
        println!("neural policy");
    } else if value.get("rows").is_some() {
        let report: eval::EvalReport = serde_json::from_str(&text)?;
        println!("eval report: {} conditioning targets, j_star {}", report.rows.len(), report.j_star);
        for row in &report.rows {
            println!("  f={} exact={} subopt={}", row.f, row.exact, row.suboptimality);
        }
    } else {
        println!("unrecognized artifact; top-level keys:");
        if let Some(obj) = value.as_object() {
            for k in obj.keys() {
                println!("  {k}");
            }
        }
    }
    Ok(())
}
