use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context as _};
use offpolicy_core::bandit::Environment;
use offpolicy_core::bounds::ScoredData;
use offpolicy_core::datagen::{bandit_feedback, load_multiclass_csv};
use offpolicy_core::experiments::{preset, BoundKind, BoundRow, StudySpec, PRESETS};
use offpolicy_core::io::{read_logged_csv, write_json, write_logged_csv, Checkpoint, LoggedMetadata};
use offpolicy_core::lgp::GaussianPosterior;
use offpolicy_core::pac::{learn_from, log_spaced_grid, LearnConfig, LearnState, PacMethod};
use offpolicy_core::selection::{
    candidate_risks, classify_outcome, select_with, CandidateSet, Classification, SelectionMethod, SelectionResult,
};
use offpolicy_core::{LoggedDataset, Policy, SeedStream};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, check_delta, check_file, FileConfig, LambdaChoice};
use crate::policy::PolicySpec;
use crate::{Cli, Command, ConvertArgs, EvaluateArgs, Failure, FailureExt, LearnArgs, SelectArgs, StudyArgs};

/// Settings shared by every command.
#[derive(Debug, Clone, Serialize)]
struct Common {
    seed: u64,
    /// Set when `--seed` or the config file named a seed.
    #[serde(skip)]
    explicit_seed: Option<u64>,
    delta: f64,
    threads: usize,
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<u8, Failure> {
    let file = match &cli.config {
        Some(path) => {
            check_file(path).usage()?;
            config::load(path).usage()?
        }
        None => FileConfig::default(),
    };
    let explicit_seed = cli.seed.or(file.seed);
    let common = Common {
        seed: explicit_seed.unwrap_or(0),
        explicit_seed,
        delta: cli.delta.or(file.delta).unwrap_or(0.05),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
    };
    check_delta(common.delta).usage()?;
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("cannot start the worker pool")
            .compute()?;
    }
    let config_file = cli.config.clone();
    match cli.command {
        Command::Evaluate(args) => evaluate(&common, args, file, config_file),
        Command::Select(args) => select(&common, args, file, config_file),
        Command::Learn(args) => learn(&common, args, file, config_file),
        Command::Study(args) => study(&common, args, file, config_file),
        Command::Convert(args) => convert(&common, args, file, config_file),
    }
}

/// Records everything needed to rerun the command.
fn write_manifest(common: &Common, command: &str, resolved: &impl Serialize, config_file: Option<PathBuf>) -> Result<(), Failure> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))
        .compute()?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config_file": config_file,
        "seed": common.seed,
        "delta": common.delta,
        "threads": common.threads,
        "resolved": resolved,
    });
    write_json(&common.out.join("manifest.json"), &manifest).compute()
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(anyhow!("missing {what}")))
}

fn load_logged(path: &Path, actions: Option<usize>) -> Result<LoggedDataset, Failure> {
    check_file(path).usage()?;
    read_logged_csv(path, actions).usage()
}

fn check_policy_files<'a>(specs: impl IntoIterator<Item = &'a PolicySpec>) -> Result<(), Failure> {
    for s in specs {
        if let Some(p) = s.file() {
            check_file(p).usage()?;
        }
    }
    Ok(())
}

fn check_labels<'a>(data: &LoggedDataset, specs: impl IntoIterator<Item = &'a PolicySpec>) -> Result<(), Failure> {
    if !data.has_labels() {
        if let Some(s) = specs.into_iter().find(|s| s.needs_labels()) {
            return Err(Failure::Usage(anyhow!("policy {s} needs a label column, which the data lacks")));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluateResolved {
    data: PathBuf,
    actions: Option<usize>,
    policy: PolicySpec,
    bounds: Vec<BoundKind>,
    lambda: LambdaChoice,
}

fn evaluate(common: &Common, args: EvaluateArgs, file: FileConfig, config_file: Option<PathBuf>) -> Result<u8, Failure> {
    let f = file.evaluate.unwrap_or_default();
    let bounds = args
        .bounds
        .or(f.bounds)
        .map(|names| names.iter().map(|n| BoundKind::parse(n.trim())).collect::<Result<Vec<_>, _>>())
        .transpose()
        .usage()?
        .unwrap_or_else(|| BoundKind::TABLE.to_vec());
    if bounds.is_empty() {
        return Err(Failure::Usage(anyhow!("no bounds requested")));
    }
    let resolved = EvaluateResolved {
        data: require(args.data.or(f.data), "--data")?,
        actions: args.actions.or(f.actions),
        policy: require(args.policy.or(f.policy), "--policy")?,
        bounds,
        lambda: args.lambda.or(f.lambda).unwrap_or(LambdaChoice::InvSqrtN),
    };
    if resolved.lambda == LambdaChoice::UnionBound {
        return Err(Failure::Usage(anyhow!("union-bound lambda applies to selection; use a number or inv-sqrt-n")));
    }
    check_policy_files([&resolved.policy])?;
    let data = load_logged(&resolved.data, resolved.actions)?;
    check_labels(&data, [&resolved.policy])?;
    let policy = resolved.policy.build(data.action_count(), data.feature_dim()).usage()?;
    write_manifest(common, "evaluate", &resolved, config_file)?;

    let n = data.len();
    let lambda = match resolved.lambda {
        LambdaChoice::Fixed(x) => x,
        _ => 1.0 / (n as f64).sqrt(),
    };
    let scored = ScoredData::new(&data, policy.as_ref()).compute()?;
    let rows: Vec<BoundRow> = resolved
        .bounds
        .iter()
        .map(|b| b.evaluate(&scored, lambda, common.delta, None))
        .collect::<Result<_, _>>()
        .compute()?;

    let csv_path = common.out.join("bounds.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))
        .compute()?;
    for r in &rows {
        w.serialize(r).compute()?;
    }
    w.flush().compute()?;
    write_json(&common.out.join("bounds.json"), &rows).compute()?;

    println!("policy {} on {} ({n} records), delta = {}", resolved.policy, resolved.data.display(), common.delta);
    println!("{:<14} {:>10} {:>12} {:>12} {:>12}", "bound", "lambda", "estimate", "lower", "upper");
    for r in &rows {
        let lower = r.lower.map(|l| format!("{l:.6}")).unwrap_or_else(|| "-".into());
        println!("{:<14} {:>10.6} {:>12.6} {:>12} {:>12.6}", r.bound, r.lambda, r.estimate, lower, r.upper);
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SelectResolved {
    data: PathBuf,
    actions: Option<usize>,
    candidates: BTreeMap<String, PolicySpec>,
    method: SelectionMethod,
    lambda: LambdaChoice,
    behavior: Option<String>,
    oracle_epsilon: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SelectOutput {
    #[serde(flatten)]
    result: SelectionResult,
    true_risks: Option<BTreeMap<String, f64>>,
    classification: Option<Classification>,
}

fn select(common: &Common, args: SelectArgs, file: FileConfig, config_file: Option<PathBuf>) -> Result<u8, Failure> {
    let f = file.select.unwrap_or_default();
    let mut candidates = f.candidates.unwrap_or_default();
    for (name, spec) in args.candidates {
        candidates.insert(name, spec);
    }
    if candidates.is_empty() {
        return Err(Failure::Usage(anyhow!("no candidates; pass --candidate NAME=POLICY")));
    }
    let resolved = SelectResolved {
        data: require(args.data.or(f.data), "--data")?,
        actions: args.actions.or(f.actions),
        method: SelectionMethod::parse(&args.method.or(f.method).unwrap_or_else(|| "LS".into())).usage()?,
        lambda: args.lambda.or(f.lambda).unwrap_or(LambdaChoice::UnionBound),
        behavior: args.behavior.or(f.behavior),
        oracle_epsilon: args.oracle_epsilon.or(f.oracle_epsilon),
        candidates,
    };
    if let Some(b) = &resolved.behavior {
        if !resolved.candidates.contains_key(b) {
            return Err(Failure::Usage(anyhow!("behavior {b:?} is not a candidate")));
        }
    }
    if let Some(e) = resolved.oracle_epsilon {
        if !(0.0..0.5).contains(&e) {
            return Err(Failure::Usage(anyhow!("oracle epsilon must lie in [0, 0.5), got {e}")));
        }
    }
    check_policy_files(resolved.candidates.values())?;
    let data = load_logged(&resolved.data, resolved.actions)?;
    check_labels(&data, resolved.candidates.values())?;
    if resolved.oracle_epsilon.is_some() && !data.has_labels() {
        return Err(Failure::Usage(anyhow!("--oracle-epsilon needs a label column in the data")));
    }
    let pols = resolved
        .candidates
        .iter()
        .map(|(name, spec)| Ok((name.clone(), spec.build(data.action_count(), data.feature_dim())?)))
        .collect::<anyhow::Result<Vec<(String, Arc<dyn Policy>)>>>()
        .usage()?;
    let set = CandidateSet::new(pols).usage()?;
    write_manifest(common, "select", &resolved, config_file)?;

    let result = select_with(&data, &set, resolved.method, resolved.lambda.into(), common.delta).compute()?;
    let (true_risks, classification) = match resolved.oracle_epsilon {
        Some(eps) => {
            let contexts = data.records().iter().map(|r| r.context.clone()).collect();
            let env = Environment::new(contexts, data.action_count(), eps).compute()?;
            let risks = candidate_risks(&set, &env).compute()?;
            let class = resolved
                .behavior
                .as_ref()
                .map(|b| classify_outcome(&result, &set, &env, b))
                .transpose()
                .compute()?;
            (Some(risks), class)
        }
        None => (None, None),
    };
    println!(
        "{} chose {:?} (lambda = {:.6}, delta = {})",
        result.method.name(),
        result.chosen,
        result.lambda_used,
        common.delta
    );
    for (name, score) in &result.scores {
        let risk = true_risks.as_ref().map(|r| format!("  true risk {:.6}", r[name])).unwrap_or_default();
        println!("  {name:<16} score {score:>12.6}{risk}");
    }
    if let Some(c) = &classification {
        println!("outcome: {}", c.outcome);
    }
    let output = SelectOutput {
        result,
        true_risks,
        classification,
    };
    write_json(&common.out.join("selection.json"), &output).compute()?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct LearnResolved {
    data: PathBuf,
    actions: Option<usize>,
    prior_file: Option<PathBuf>,
    resume: Option<PathBuf>,
    config: LearnConfig,
}

fn learn(common: &Common, args: LearnArgs, file: FileConfig, config_file: Option<PathBuf>) -> Result<u8, Failure> {
    let f = file.learn.unwrap_or_default();
    let data_path = require(args.data.or(f.data), "--data")?;
    let actions = args.actions.or(f.actions);
    let resume = args.resume.or(f.resume);
    let prior_file = args.prior.or(f.prior);
    let method = PacMethod::parse(&args.method.or(f.method).unwrap_or_else(|| "LS-LIN".into())).usage()?;
    let prior_sigma = args.prior_sigma.or(f.prior_sigma).unwrap_or(1.0);
    let epochs = args.epochs.or(f.epochs).unwrap_or(100);
    let grid = log_spaced_grid(
        args.grid_size.or(f.grid_size).unwrap_or(100),
        f.grid_min.unwrap_or(1e-4),
        f.grid_max.unwrap_or(1.0),
    )
    .usage()?;
    if let Some(p) = &resume {
        check_file(p).usage()?;
    }
    if let Some(p) = &prior_file {
        check_file(p).usage()?;
    }
    let data = load_logged(&data_path, actions)?;
    let (k, p) = (data.action_count(), data.feature_dim());

    let checkpoint = resume.as_deref().map(Checkpoint::load).transpose().usage()?;
    let (prior, state, seed) = match &checkpoint {
        Some(ck) => {
            if prior_file.is_some() {
                return Err(Failure::Usage(anyhow!("--prior conflicts with --resume; the checkpoint carries its prior")));
            }
            if ck.k != k || ck.p != p {
                return Err(Failure::Usage(anyhow!("checkpoint has K={}, p={}; the data has K={k}, p={p}", ck.k, ck.p)));
            }
            (ck.prior().usage()?, Some(ck.state().usage()?), ck.seed)
        }
        None => {
            let prior = match &prior_file {
                Some(path) => crate::policy::load_posterior(path).usage()?,
                None => GaussianPosterior::zeros(k, p, prior_sigma).usage()?,
            };
            if prior.k != k || prior.p != p {
                return Err(Failure::Usage(anyhow!("prior has K={}, p={}; the data has K={k}, p={p}", prior.k, prior.p)));
            }
            (prior, None, common.seed)
        }
    };
    let mut cfg = LearnConfig::new(prior);
    cfg.method = method;
    cfg.delta = common.delta;
    cfg.lambda_grid = grid;
    cfg.learning_rate = args.learning_rate.or(f.learning_rate).unwrap_or(cfg.learning_rate);
    cfg.batch_size = args.batch_size.or(f.batch_size);
    cfg.mc_samples = args.mc_samples.or(f.mc_samples).unwrap_or(cfg.mc_samples);
    cfg.seed = seed;
    cfg.epochs = state.as_ref().map_or(0, |s| s.epoch) + epochs;
    cfg.validate().usage()?;
    let state = state.unwrap_or_else(|| LearnState::initial(&cfg));
    let resolved = LearnResolved {
        data: data_path,
        actions,
        prior_file,
        resume,
        config: cfg.clone(),
    };
    write_manifest(common, "learn", &resolved, config_file)?;

    let outcome = learn_from(&data, &cfg, state).compute()?;
    Checkpoint::new(&outcome.state, &cfg.prior, cfg.seed)
        .save(&common.out.join("checkpoint.json"))
        .compute()?;
    let trace_path = common.out.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace_path)
        .with_context(|| format!("cannot write {}", trace_path.display()))
        .compute()?;
    for row in &outcome.trace {
        w.serialize(row).compute()?;
    }
    w.flush().compute()?;
    let kl = offpolicy_core::lgp::kl_gaussian(&outcome.state.posterior, &cfg.prior).compute()?;
    write_json(
        &common.out.join("result.json"),
        &json!({
            "method": cfg.method.name(),
            "epochs_completed": outcome.state.epoch,
            "guaranteed_risk": outcome.guaranteed_risk,
            "lambda": outcome.lambda,
            "kl": kl,
            "sigma": outcome.state.posterior.sigma,
        }),
    )
    .compute()?;
    println!(
        "{}: {} epochs, guaranteed risk {:.6} at lambda {:.6}, KL {:.4}",
        cfg.method.name(),
        outcome.state.epoch,
        outcome.guaranteed_risk,
        outcome.lambda,
        kl
    );
    Ok(0)
}

#[derive(Debug, Serialize)]
struct StudyResolved {
    preset: Option<String>,
    data_dir: PathBuf,
    spec: StudySpec,
}

fn study(common: &Common, args: StudyArgs, file: FileConfig, config_file: Option<PathBuf>) -> Result<u8, Failure> {
    let f = file.study.unwrap_or_default();
    let data_dir = args.data_dir.or(f.data_dir).unwrap_or_else(|| PathBuf::from("data"));
    let preset_name = args.preset.or(f.preset);
    let mut spec = match (&preset_name, f.spec) {
        (Some(name), _) => preset(name, &data_dir).usage()?,
        (None, Some(spec)) => spec,
        (None, None) => {
            return Err(Failure::Usage(anyhow!(
                "no study given; pass --preset ({}) or a [study.spec] table",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(seed) = common.explicit_seed {
        spec.set_seed(seed);
    }
    spec.set_delta(common.delta);
    if let Some(r) = args.replications {
        match &mut spec {
            StudySpec::Coverage(c) => c.replications = r,
            _ => return Err(Failure::Usage(anyhow!("--replications applies to coverage studies only"))),
        }
    }
    spec.validate().usage()?;
    for d in spec.datasets() {
        if let offpolicy_core::experiments::DatasetSpec::Csv { path, .. } = d {
            check_file(path).usage()?;
        }
    }
    let resolved = StudyResolved {
        preset: preset_name,
        data_dir,
        spec,
    };
    write_manifest(common, "study", &resolved, config_file)?;
    let report = resolved.spec.run().compute()?;
    report.write(&common.out).compute()?;
    println!(
        "{} study: {} metric rows, {} failed cells -> {}",
        report.study,
        report.rows.len(),
        report.failures.len(),
        common.out.display()
    );
    for fail in &report.failures {
        eprintln!("cell {} failed: {}", fail.scenario_id, fail.error);
    }
    Ok(if report.has_failures() { 1 } else { 0 })
}

#[derive(Debug, Serialize)]
struct ConvertResolved {
    input: PathBuf,
    label_column: String,
    behavior: PolicySpec,
    epsilon: f64,
    standardize: bool,
    bias: bool,
    output: PathBuf,
}

fn convert(common: &Common, args: ConvertArgs, file: FileConfig, config_file: Option<PathBuf>) -> Result<u8, Failure> {
    let f = file.convert.unwrap_or_default();
    let resolved = ConvertResolved {
        input: require(args.input.or(f.input), "--input")?,
        label_column: args.label_column.or(f.label_column).unwrap_or_else(|| "label".into()),
        behavior: args.behavior.or(f.behavior).unwrap_or(PolicySpec::Uniform),
        epsilon: args.epsilon.or(f.epsilon).unwrap_or(0.0),
        standardize: args.standardize || f.standardize.unwrap_or(false),
        bias: args.bias || f.bias.unwrap_or(false),
        output: args.output.or(f.output).unwrap_or_else(|| common.out.join("logged.csv")),
    };
    if !(0.0..0.5).contains(&resolved.epsilon) {
        return Err(Failure::Usage(anyhow!("epsilon must lie in [0, 0.5), got {}", resolved.epsilon)));
    }
    check_file(&resolved.input).usage()?;
    check_policy_files([&resolved.behavior])?;
    let mut mc = load_multiclass_csv(&resolved.input, &resolved.label_column).usage()?;
    if resolved.standardize {
        mc.standardize();
    }
    if resolved.bias {
        mc = mc.with_bias();
    }
    let behavior = resolved.behavior.build(mc.k, mc.p).usage()?;
    write_manifest(common, "convert", &resolved, config_file)?;
    let data = bandit_feedback(&mc, behavior.as_ref(), resolved.epsilon, SeedStream::new(common.seed)).compute()?;
    if let Some(dir) = resolved.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).compute()?;
    }
    let meta = LoggedMetadata {
        k: mc.k,
        p: mc.p,
        seed: Some(common.seed),
        scenario: Some(format!("{} via {} at epsilon {}", resolved.input.display(), resolved.behavior, resolved.epsilon)),
    };
    write_logged_csv(&resolved.output, &data, &meta).compute()?;
    println!("{} records, K = {}, p = {} -> {}", data.len(), mc.k, mc.p, resolved.output.display());
    Ok(0)
}
