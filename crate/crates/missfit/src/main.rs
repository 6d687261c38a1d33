use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use missfit::bench::{self, RunOptions};
use missfit::config::ExperimentConfig;
use missfit::fmt::sig6;
use missfit::{io, Error, Result};
use missfit_core::adaptive::MaskedPredictor;
use missfit_core::data::unique_patterns;
use missfit_core::datagen::{self, GeneratorSpec, Mechanism, SemiSyntheticSpec, Setting, SignalKind};
use missfit_core::methods::{fit_method, Candidate, FitOptions, FittedModel, Grids, Method};
use missfit_core::{metrics, MaskedDataset, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "missfit", version, about = "Regression with missing data: adaptive models, joint imputation, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic or semi-synthetic dataset
    Generate(GenerateArgs),
    /// Tune and fit one method on a dataset
    Fit(FitArgs),
    /// Predict with a fitted model
    Predict(PredictArgs),
    /// Run a benchmark experiment from a config file
    Bench(BenchArgs),
    /// Summarise a dataset or a model file
    Inspect(InspectArgs),
}

fn probability(s: &str) -> std::result::Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(format!("{p} is outside (0, 1)"))
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

fn method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Mcar,
    Censoring,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Linear,
    Nn,
}

impl From<SignalArg> for SignalKind {
    fn from(s: SignalArg) -> Self {
        match s {
            SignalArg::Linear => SignalKind::Linear,
            SignalArg::Nn => SignalKind::NeuralNet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Mar,
    Nmar,
    Am,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output CSV; the JSON sidecar is written next to it
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Rank of the covariance factor
    #[arg(long, default_value_t = 5)]
    r: usize,
    /// Ridge added to the covariance diagonal
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = SignalArg::Linear)]
    signal: SignalArg,
    /// Features feeding the signal
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
    snr: f64,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    mechanism: MechanismArg,
    /// Missing fraction
    #[arg(long, default_value_t = 0.5, value_parser = probability)]
    p: f64,
    /// Overridden by MISSFIT_SEED when set
    #[arg(long)]
    seed: Option<u64>,
    /// Semi-synthetic mode: CSV whose missing cells give the mask
    #[arg(long, requires = "full", requires = "setting")]
    from: Option<PathBuf>,
    /// Semi-synthetic mode: complete CSV with the same feature columns
    #[arg(long, requires = "from")]
    full: Option<PathBuf>,
    #[arg(long, value_enum, requires = "from")]
    setting: Option<SettingArg>,
    /// Signal features affected by missingness (semi-synthetic mode)
    #[arg(long, default_value_t = 0)]
    k_missing: usize,
    /// Column to drop from the semi-synthetic inputs
    #[arg(long)]
    drop: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long, value_parser = method)]
    method: Method,
    /// Output model JSON
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Hyper-parameter grids as JSON; defaults otherwise
    #[arg(long)]
    grids: Option<PathBuf>,
    /// Complete design, required by the oracle
    #[arg(long)]
    full: Option<PathBuf>,
    /// Overridden by MISSFIT_SEED when set
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with one `prediction` column
    #[arg(long)]
    out: PathBuf,
    /// Complete design, required by the oracle
    #[arg(long)]
    full: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results CSV
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep completed tasks found in the results file
    #[arg(long)]
    resume: bool,
    /// Print the plan without fitting
    #[arg(long)]
    dry_run: bool,
    /// Fill the `seconds` column (makes the file run-dependent)
    #[arg(long)]
    timings: bool,
    /// Replaces the config seed; overridden by MISSFIT_SEED when set
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectTarget {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    what: InspectTarget,
    /// Target column of `--data`, if it has one
    #[arg(long)]
    target: Option<String>,
}

fn env_seed(flag: Option<u64>) -> Result<Option<u64>> {
    match std::env::var("MISSFIT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("MISSFIT_SEED=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn usage_from_core(e: missfit_core::Error) -> Error {
    match e {
        missfit_core::Error::InvalidParameter { name, reason } => Error::Usage(format!("--{}: {reason}", name.replace('_', "-"))),
        e => Error::Core(e),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn print_columns(ds: &MaskedDataset) {
    println!("n = {}, d = {}", ds.n(), ds.d());
    let names: Vec<String> = match ds.feature_names() {
        Some(n) => n.to_vec(),
        None => (1..=ds.d()).map(|j| format!("x{j}")).collect(),
    };
    let mut total = 0.0;
    for (j, name) in names.iter().enumerate() {
        let f = ds.missing_fraction(j);
        total += f;
        println!("  {name}: missing {}", sig6(f));
    }
    if ds.d() > 0 {
        println!("overall missing fraction {}", sig6(total / ds.d() as f64));
    }
}

#[derive(Serialize)]
struct GeneratedSidecar<'a> {
    target: &'a str,
    features: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<&'a GeneratorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semisynthetic: Option<&'a SemiSyntheticSpec>,
    signal: &'a datagen::Signal,
    noise_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permutation_objective: Option<f64>,
}

fn generate(args: GenerateArgs) -> Result<()> {
    let seed = env_seed(args.seed)?.unwrap_or(0);
    if let Some(from) = &args.from {
        let full = args.full.as_ref().expect("clap enforces --full");
        let setting = match args.setting.expect("clap enforces --setting") {
            SettingArg::Mar => Setting::Mar,
            SettingArg::Nmar => Setting::Nmar,
            SettingArg::Am => Setting::Am,
        };
        let (masked, _) = io::read_features(from, args.drop.as_deref())?;
        let (complete, _) = io::read_features(full, args.drop.as_deref())?;
        if masked.feature_names() != complete.feature_names() || masked.n() != complete.n() {
            return Err(Error::Usage("--from and --full must have the same rows and feature columns".into()));
        }
        if complete.mask().iter().any(|&m| m != 0) {
            return Err(Error::Usage("--full must not contain missing cells".into()));
        }
        let spec = SemiSyntheticSpec {
            setting,
            k: args.k,
            k_missing: args.k_missing,
            signal: args.signal.into(),
            snr: args.snr,
            seed,
        };
        let out = datagen::gen_semisynthetic(complete.x(), masked.mask(), &spec).map_err(usage_from_core)?;
        let names = masked.feature_names().map(<[String]>::to_vec).unwrap_or_default();
        let ds = MaskedDataset::new(datagen::hide(complete.x(), &out.mask), out.mask.clone(), out.y.clone())?
            .with_feature_names(names.clone())?;
        io::write_dataset(&args.out, &ds, "y")?;
        io::write_json(
            &sidecar(&args.out),
            &GeneratedSidecar {
                target: "y",
                features: names,
                generator: None,
                semisynthetic: Some(&spec),
                signal: &out.signal,
                noise_sd: out.noise_sd,
                thresholds: None,
                permutation_objective: out.permutation.as_ref().map(|p| p.objective),
            },
        )?;
        print_columns(&ds);
        return Ok(());
    }
    let mechanism = match args.mechanism {
        MechanismArg::Mcar => Mechanism::Mcar { p: args.p },
        MechanismArg::Censoring => Mechanism::Censoring { p: args.p },
    };
    let spec = GeneratorSpec {
        n: args.n,
        d: args.d,
        r: args.r,
        eps: args.eps,
        signal: args.signal.into(),
        k: args.k.unwrap_or(5.min(args.d)),
        snr: args.snr,
        mechanism,
        seed,
    };
    spec.validate().map_err(usage_from_core)?;
    let inst = datagen::generate(&spec)?;
    let names: Vec<String> = (1..=spec.d).map(|j| format!("x{j}")).collect();
    let ds = inst.data.clone().with_feature_names(names.clone())?;
    io::write_dataset(&args.out, &ds, "y")?;
    io::write_json(
        &sidecar(&args.out),
        &GeneratedSidecar {
            target: "y",
            features: names,
            generator: Some(&spec),
            semisynthetic: None,
            signal: &inst.signal,
            noise_sd: inst.noise_sd,
            thresholds: inst.thresholds.as_deref(),
            permutation_objective: None,
        },
    )?;
    print_columns(&ds);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    method: Method,
    target: String,
    features: Vec<String>,
    choice: Candidate,
    cv_score: Option<f64>,
    model: FittedModel,
}

fn read_full(path: Option<&PathBuf>, ds: &MaskedDataset) -> Result<Option<Matrix>> {
    let Some(path) = path else { return Ok(None) };
    let (full, _) = io::read_features(path, None)?;
    let names_ok = match (full.feature_names(), ds.feature_names()) {
        (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x == y) && a.len() >= b.len(),
        _ => false,
    };
    if !names_ok || full.n() != ds.n() || full.mask().iter().any(|&m| m != 0) {
        return Err(Error::Usage("--full must be a complete CSV with the same rows and feature columns".into()));
    }
    let cols: Vec<usize> = (0..ds.d()).collect();
    Ok(Some(full.x().select_cols(&cols)))
}

fn score_line(y: &[f64], pred: &[f64]) -> String {
    let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);
    let r = if binary {
        metrics::scaled_auc(y, pred).map(|v| ("2*AUC-1", v))
    } else {
        metrics::r_squared(y, pred).map(|v| ("R^2", v))
    };
    match r {
        Ok((name, v)) => format!("{name} = {}", sig6(v)),
        Err(e) => format!("score unavailable: {e}"),
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let seed = env_seed(args.seed)?.unwrap_or(0);
    let ds = io::read_dataset(&args.data, &args.target)?;
    let grids: Grids = match &args.grids {
        Some(p) => io::read_json(p)?,
        None => Grids::default(),
    };
    if args.method.needs_ground_truth() && args.full.is_none() {
        return Err(Error::Usage("--method oracle needs --full".into()));
    }
    if args.folds < 2 || args.folds > ds.n() {
        return Err(Error::Usage(format!("--folds must lie in [2, {}]", ds.n())));
    }
    let x_full = read_full(args.full.as_ref(), &ds)?;
    let tuned = fit_method(args.method, &ds, x_full.as_ref(), &grids, &FitOptions { folds: args.folds, seed })?;
    let pred = tuned.model.predict(&ds, x_full.as_ref())?;
    println!("method {}", args.method);
    println!("choice {}", serde_json::to_string(&tuned.choice).unwrap_or_default());
    if let Some(s) = tuned.cv_score {
        println!("cv score {}", sig6(s));
    }
    println!("training {}", score_line(ds.y(), &pred));
    describe_model(&tuned.model);
    let file = ModelFile {
        method: args.method,
        target: args.target,
        features: ds.feature_names().map(<[String]>::to_vec).unwrap_or_default(),
        choice: tuned.choice,
        cv_score: tuned.cv_score,
        model: tuned.model,
    };
    io::write_json(&args.out, &file)
}

fn describe_model(model: &FittedModel) {
    match model {
        FittedModel::Adaptive(m) => {
            println!("expansion size {} ({} nonzero)", m.expansion_size, m.fit.nonzeros());
            if !m.patterns.is_empty() {
                println!("pattern models {}", m.patterns.len());
            }
        }
        FittedModel::Partition(t) => println!("partition leaves {}", t.root.leaves().len()),
        FittedModel::Joint(j) => {
            let mu: Vec<String> = j.mu.iter().map(|v| sig6(*v)).collect();
            println!("mu [{}]", mu.join(", "));
            println!("refits {}, stop {:?}", j.refits, j.stop);
        }
        FittedModel::MeanImpute { mu, .. } => {
            let mu: Vec<String> = mu.iter().map(|v| sig6(*v)).collect();
            println!("mu [{}]", mu.join(", "));
        }
        FittedModel::Tree(t) => println!("tree depth {}, leaves {}", t.root.depth(), t.root.leaf_count()),
        FittedModel::Forest(f) => println!("forest of {} trees", f.trees.len()),
        FittedModel::Complete { columns, .. } => println!("complete columns {columns:?}"),
        FittedModel::Oracle(f) => println!("oracle coefficients {}", f.coefficients.len()),
    }
}

fn predict(args: PredictArgs) -> Result<()> {
    let file: ModelFile = io::read_json(&args.model)?;
    let target = Some(file.target.as_str());
    let (ds, has_target) = match io::read_features(&args.data, target) {
        Ok(v) => v,
        Err(Error::Csv { message, .. }) if message.contains("no target column") => io::read_features(&args.data, None)?,
        Err(e) => return Err(e),
    };
    let names = ds.feature_names().map(<[String]>::to_vec).unwrap_or_default();
    if names != file.features {
        return Err(Error::Usage(format!(
            "--data features {names:?} do not match the model's {:?}",
            file.features
        )));
    }
    let x_full = read_full(args.full.as_ref(), &ds)?;
    if file.method.needs_ground_truth() && x_full.is_none() {
        return Err(Error::Usage("oracle models need --full".into()));
    }
    let pred = file.model.predict(&ds, x_full.as_ref())?;
    io::write_column(&args.out, "prediction", &pred)?;
    println!("{} predictions written to {}", pred.len(), args.out.display());
    if has_target {
        println!("{}", score_line(ds.y(), &pred));
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = env_seed(args.seed)? {
        cfg.seed = s;
    }
    if args.jobs == Some(0) {
        return Err(Error::Usage("--jobs must be positive".into()));
    }
    let tasks = bench::plan(&cfg);
    if args.dry_run {
        println!("experiment {} ({})", cfg.name, cfg.source.setting());
        println!(
            "replications {}, test fraction {}, folds {}, seed {}",
            cfg.replications,
            sig6(cfg.test_fraction),
            cfg.folds,
            cfg.seed
        );
        let names: Vec<String> = cfg.methods.iter().map(|m| m.name()).collect();
        println!("methods {}", names.join(", "));
        println!("tasks {} (methods x replications), records {}", tasks.len(), 2 * tasks.len());
        return Ok(());
    }
    let out = args.out.expect("clap requires --out without --dry-run");
    let opts = RunOptions {
        jobs: args.jobs,
        timings: args.timings,
        resume: args.resume,
    };
    let summary = bench::run_to_file(&cfg, &opts, &out)?;
    if summary.resumed > 0 {
        println!("resumed {} completed tasks, ran {}", summary.resumed, summary.ran);
    }
    println!("{:<20} {:<18} {:>4} {:>12} {:>12}", "method", "metric", "n", "mean", "se");
    for s in bench::aggregate(&summary.records) {
        println!(
            "{:<20} {:<18} {:>4} {:>12} {:>12}",
            s.method,
            s.metric,
            s.count,
            sig6(s.mean),
            s.se.map(sig6).unwrap_or_else(|| "-".into())
        );
    }
    let test_metric = bench::metric_names(summary.records.iter().any(|r| r.metric == "scaled_auc"))[0];
    let wins = bench::win_counts(&summary.records, test_metric);
    if !wins.is_empty() {
        let names: Vec<String> = cfg.methods.iter().map(|m| m.name()).collect();
        println!();
        println!("strict wins on {test_metric} (row beats column, paired replications)");
        print!("{:<20}", "");
        for n in &names {
            print!(" {:>12}", truncate(n, 12));
        }
        println!();
        for a in &names {
            print!("{:<20}", a);
            for b in &names {
                match wins.iter().find(|w| &w.method == a && &w.other == b) {
                    Some(w) => print!(" {:>12}", format!("{}/{}", w.wins, w.paired)),
                    None => print!(" {:>12}", "-"),
                }
            }
            println!();
        }
    }
    for f in &summary.failures {
        eprintln!("warning: {} replication {} failed: {}", f.method, f.replication, f.note);
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn truncate(s: &str, n: usize) -> &str {
    s.char_indices().nth(n).map_or(s, |(i, _)| &s[..i])
}

fn inspect(args: InspectArgs) -> Result<()> {
    if let Some(path) = &args.what.data {
        let (ds, _) = io::read_features(path, args.target.as_deref())?;
        print_columns(&ds);
        let mut groups = unique_patterns(&ds);
        println!("distinct missingness patterns {}", groups.len());
        groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        for (key, rows) in groups.iter().take(5) {
            println!("  {key}: {} rows", rows.len());
        }
        return Ok(());
    }
    let path = args.what.model.as_ref().expect("clap requires --data or --model");
    let file: ModelFile = io::read_json(path)?;
    println!("method {}", file.method);
    println!("features {}", file.features.len());
    println!("choice {}", serde_json::to_string(&file.choice).unwrap_or_default());
    if let Some(s) = file.cv_score {
        println!("cv score {}", sig6(s));
    }
    describe_model(&file.model);
    if let FittedModel::Adaptive(m) = &file.model {
        debug_assert_eq!(m.d(), file.features.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
