//! Experiment runner: per replication, split the data, tune every method by
//! cross-validation on the training rows, refit, and score on the test rows.
//!
//! Tasks are `(method, replication)` pairs run on a rayon pool. Every task
//! draws its randomness from seeds derived from the experiment seed, and
//! records are sorted into a canonical order before the final write, so the
//! results file does not depend on the worker count.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use missfit_core::cv::fold_assignment;
use missfit_core::datagen::{gen_semisynthetic, generate_complete, hide, mask_for, SemiSyntheticSpec};
use missfit_core::methods::{fit_method, FitOptions, Method};
use missfit_core::{metrics, seed, Matrix, MaskedDataset};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Source};
use crate::error::{Error, Result};
use crate::io::{self, fmt_f64};

pub const HEADER: &str = "dataset,method,setting,replication,metric,value,seconds";

const SPLIT_STREAM: u64 = 0x51;
const DATA_STREAM: u64 = 0xda;
const FIT_STREAM: u64 = 0xf1;

/// One row of the results file. `value` is empty when the task failed;
/// `seconds` is only filled when timings are requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dataset: String,
    pub method: String,
    pub setting: String,
    pub replication: usize,
    pub metric: String,
    pub value: Option<f64>,
    pub seconds: Option<f64>,
}

impl Record {
    fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}\n",
            self.dataset,
            self.method,
            self.setting,
            self.replication,
            self.metric,
            opt(self.value),
            opt(self.seconds)
        )
    }
}

pub fn format_records(records: &[Record]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.line());
    }
    out
}

/// Parses a results file. A final line without a newline (left by an
/// interrupted writer) is ignored.
pub fn parse_records(path: &Path, text: &str) -> Result<Vec<Record>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        None => return Ok(Vec::new()),
        Some(_) => return Err(Error::csv(path, "unexpected results header")),
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::csv(path, format!("line {}: malformed record", k + 2));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        out.push(Record {
            dataset: f[0].into(),
            method: f[1].into(),
            setting: f[2].into(),
            replication: f[3].parse().map_err(|_| bad())?,
            metric: f[4].into(),
            value: num(f[5])?,
            seconds: num(f[6])?,
        });
    }
    Ok(out)
}

/// Train and test rows of one replication.
pub fn split_rows(n: usize, test_fraction: f64, folds: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
    if n < n_test + folds.max(2) {
        return Err(Error::Config(format!(
            "{n} rows are too few for a {test_fraction} test fraction and {folds} folds"
        )));
    }
    // a shuffled round-robin over n parts puts the first n_test shuffled rows in the test set
    let order = fold_assignment(n, n, seed)?;
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| order[i] < n_test);
    Ok((train, test))
}

/// Data of one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub train: MaskedDataset,
    pub test: MaskedDataset,
    pub x_full_train: Option<Matrix>,
    pub x_full_test: Option<Matrix>,
}

/// Data shared by all replications of a non-synthetic source.
#[derive(Debug, Clone)]
pub enum Loaded {
    Synthetic,
    Fixed { data: MaskedDataset, x_full: Option<Matrix> },
}

fn same_names(a: &MaskedDataset, b: &MaskedDataset) -> bool {
    a.feature_names() == b.feature_names()
}

/// Reads files and draws semi-synthetic responses.
pub fn load(cfg: &ExperimentConfig) -> Result<Loaded> {
    match &cfg.source {
        Source::Synthetic(_) => Ok(Loaded::Synthetic),
        Source::Csv(s) => Ok(Loaded::Fixed {
            data: io::read_dataset(&s.path, &s.target)?,
            x_full: None,
        }),
        Source::Semisynthetic(s) => {
            let (masked, _) = io::read_features(&s.path, s.target.as_deref())?;
            let (full, _) = io::read_features(&s.full_path, s.target.as_deref())?;
            if !same_names(&masked, &full) || masked.n() != full.n() {
                return Err(Error::Config(format!(
                    "{} and {} must have the same rows and feature columns",
                    s.path.display(),
                    s.full_path.display()
                )));
            }
            if full.mask().iter().any(|&m| m != 0) {
                return Err(Error::Config(format!("{} has missing cells", s.full_path.display())));
            }
            let spec = SemiSyntheticSpec {
                setting: s.setting,
                k: s.k,
                k_missing: s.k_missing,
                signal: s.signal,
                snr: s.snr,
                seed: seed::derive(cfg.seed, &[DATA_STREAM]),
            };
            let out = gen_semisynthetic(full.x(), masked.mask(), &spec)?;
            let names = masked.feature_names().map(<[String]>::to_vec).unwrap_or_default();
            let data = MaskedDataset::new(hide(full.x(), &out.mask), out.mask, out.y)?.with_feature_names(names)?;
            Ok(Loaded::Fixed {
                data,
                x_full: Some(full.x().clone()),
            })
        }
    }
}

/// Builds replication `rep`. Synthetic data are regenerated per
/// replication; censoring thresholds come from the training rows.
pub fn prepare(cfg: &ExperimentConfig, loaded: &Loaded, rep: usize) -> Result<Replication> {
    let split_seed = seed::derive(cfg.seed, &[SPLIT_STREAM, rep as u64]);
    let (data, x_full, train, test) = match (&cfg.source, loaded) {
        (Source::Synthetic(s), _) => {
            let spec = s.spec(seed::derive(cfg.seed, &[DATA_STREAM, rep as u64]));
            let complete = generate_complete(&spec)?;
            let (train, test) = split_rows(spec.n, cfg.test_fraction, cfg.folds, split_seed)?;
            let (mask, thresholds) = mask_for(&spec, &complete.x_full, &train)?;
            let inst = complete.into_instance(mask, thresholds)?;
            (inst.data, Some(inst.x_full), train, test)
        }
        (_, Loaded::Fixed { data, x_full }) => {
            let (train, test) = split_rows(data.n(), cfg.test_fraction, cfg.folds, split_seed)?;
            (data.clone(), x_full.clone(), train, test)
        }
        (_, Loaded::Synthetic) => return Err(Error::Config("source was not loaded".into())),
    };
    Ok(Replication {
        train: data.subset(&train),
        test: data.subset(&test),
        x_full_train: x_full.as_ref().map(|x| x.select_rows(&train)),
        x_full_test: x_full.as_ref().map(|x| x.select_rows(&test)),
    })
}

fn is_binary(y: &[f64]) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Metric names written per task: the test score, then the training score.
pub fn metric_names(binary: bool) -> [&'static str; 2] {
    if binary {
        ["scaled_auc", "train_scaled_auc"]
    } else {
        ["r2", "train_r2"]
    }
}

fn score(binary: bool, y: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(if binary {
        metrics::scaled_auc(y, pred)?
    } else {
        metrics::r_squared(y, pred)?
    })
}

fn name_key(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Test and training scores of one method on one replication.
pub fn evaluate(cfg: &ExperimentConfig, method: Method, rep: usize, data: &Replication, binary: bool) -> Result<[f64; 2]> {
    let opts = FitOptions {
        folds: cfg.folds,
        seed: seed::derive(cfg.seed, &[FIT_STREAM, rep as u64, name_key(&method.name())]),
    };
    let tuned = fit_method(method, &data.train, data.x_full_train.as_ref(), &cfg.grids, &opts)?;
    let test_pred = tuned.model.predict(&data.test, data.x_full_test.as_ref())?;
    let train_pred = tuned.model.predict(&data.train, data.x_full_train.as_ref())?;
    Ok([score(binary, data.test.y(), &test_pred)?, score(binary, data.train.y(), &train_pred)?])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub method: String,
    pub replication: usize,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
    pub timings: bool,
    /// Keep completed records of an existing results file.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
    pub ran: usize,
    pub resumed: usize,
}

/// Every `(method index, replication)` task in canonical order.
pub fn plan(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.replications).map(move |r| (m, r)))
        .collect()
}

fn canonical(cfg: &ExperimentConfig, records: &mut [Record], binary: bool) {
    let names = metric_names(binary);
    let method_index = |name: &str| cfg.methods.iter().position(|m| m.name() == name).unwrap_or(usize::MAX);
    let metric_index = |name: &str| names.iter().position(|m| *m == name).unwrap_or(usize::MAX);
    records.sort_by(|a, b| {
        (method_index(&a.method), a.replication, metric_index(&a.metric)).cmp(&(
            method_index(&b.method),
            b.replication,
            metric_index(&b.metric),
        ))
    });
}

fn task_records(cfg: &ExperimentConfig, method: Method, rep: usize, binary: bool, values: Option<[f64; 2]>, seconds: Option<f64>) -> Vec<Record> {
    metric_names(binary)
        .iter()
        .enumerate()
        .map(|(k, metric)| Record {
            dataset: cfg.name.clone(),
            method: method.name(),
            setting: cfg.source.setting(),
            replication: rep,
            metric: metric.to_string(),
            value: values.map(|v| v[k]),
            seconds,
        })
        .collect()
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Whether the experiment's target is binary, decided on all of its data.
fn target_is_binary(cfg: &ExperimentConfig, loaded: &Loaded) -> bool {
    match (loaded, &cfg.source) {
        (Loaded::Fixed { data, .. }, _) => is_binary(data.y()),
        _ => false,
    }
}

/// Runs every task not already present and returns all records in
/// canonical order. `sink` receives the records of each finished task.
pub fn run_tasks(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    done: &BTreeSet<(String, usize)>,
    sink: &(dyn Fn(&[Record]) -> Result<()> + Sync),
) -> Result<(Vec<Record>, Vec<Failure>, usize)> {
    cfg.validate()?;
    let loaded = load(cfg)?;
    let binary = target_is_binary(cfg, &loaded);
    let todo: Vec<(usize, usize)> = plan(cfg)
        .into_iter()
        .filter(|&(m, r)| !done.contains(&(cfg.methods[m].name(), r)))
        .collect();
    let reps: BTreeSet<usize> = todo.iter().map(|&(_, r)| r).collect();
    let results = with_pool(opts.jobs, || -> Result<Vec<(Vec<Record>, Option<Failure>)>> {
        let data: Vec<(usize, Result<Replication>)> = reps.par_iter().map(|&r| (r, prepare(cfg, &loaded, r))).collect();
        todo.par_iter()
            .map(|&(m, r)| {
                let method = cfg.methods[m];
                let rep_data = &data.iter().find(|(k, _)| *k == r).expect("prepared").1;
                let start = Instant::now();
                let outcome = match rep_data {
                    Ok(d) => evaluate(cfg, method, r, d, binary),
                    Err(e) => Err(Error::Config(format!("replication data: {e}"))),
                };
                let seconds = opts.timings.then(|| start.elapsed().as_secs_f64());
                let (values, failure) = match outcome {
                    Ok(v) => (Some(v), None),
                    Err(e) => (
                        None,
                        Some(Failure {
                            method: method.name(),
                            replication: r,
                            note: e.to_string(),
                        }),
                    ),
                };
                let records = task_records(cfg, method, r, binary, values, seconds);
                sink(&records)?;
                Ok((records, failure))
            })
            .collect()
    })??;
    let ran = results.len();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    canonical(cfg, &mut records, binary);
    Ok((records, failures, ran))
}

/// Runs the experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (records, failures, ran) = run_tasks(cfg, opts, &BTreeSet::new(), &|_| Ok(()))?;
    Ok(RunSummary {
        records,
        failures,
        ran,
        resumed: 0,
    })
}

/// Companion file listing failed tasks.
pub fn errors_path(out: &Path) -> PathBuf {
    out.with_extension("errors.csv")
}

/// Runs the experiment, appending each finished task to `out` as it
/// completes and rewriting the file in canonical order at the end. With
/// `opts.resume`, tasks whose records are already in `out` (with values)
/// are kept and not rerun.
pub fn run_to_file(cfg: &ExperimentConfig, opts: &RunOptions, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let mut kept: Vec<Record> = Vec::new();
    if opts.resume && out.exists() {
        let text = std::fs::read_to_string(out).map_err(|e| Error::io(out, e))?;
        let existing = parse_records(out, &text)?;
        let names: Vec<String> = cfg.methods.iter().map(|m| m.name()).collect();
        kept = existing
            .into_iter()
            .filter(|r| r.dataset == cfg.name && names.contains(&r.method) && r.replication < cfg.replications)
            .collect();
    }
    // a task is done when all its metrics have values
    let mut per_task: std::collections::BTreeMap<(String, usize), (usize, bool)> = Default::default();
    for r in &kept {
        let e = per_task.entry((r.method.clone(), r.replication)).or_insert((0, true));
        e.0 += 1;
        e.1 &= r.value.is_some();
    }
    let done: BTreeSet<(String, usize)> = per_task
        .into_iter()
        .filter(|(_, (count, ok))| *count == 2 && *ok)
        .map(|(k, _)| k)
        .collect();
    kept.retain(|r| done.contains(&(r.method.clone(), r.replication)));

    std::fs::write(out, format_records(&kept)).map_err(|e| Error::io(out, e))?;
    let file = OpenOptions::new().append(true).open(out).map_err(|e| Error::io(out, e))?;
    let file = Mutex::new(file);
    let sink = |records: &[Record]| -> Result<()> {
        let text: String = records.iter().map(Record::line).collect();
        let mut f = file.lock().expect("results writer poisoned");
        f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(out, e))
    };
    let (new, failures, ran) = run_tasks(cfg, opts, &done, &sink)?;
    drop(file);

    let resumed = done.len();
    let mut records = kept;
    records.extend(new);
    let binary = records.iter().any(|r| r.metric == "scaled_auc");
    canonical(cfg, &mut records, binary);
    let tmp = out.with_extension("csv.tmp");
    std::fs::write(&tmp, format_records(&records)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, out).map_err(|e| Error::io(out, e))?;

    let errors = errors_path(out);
    if failures.is_empty() {
        if errors.exists() {
            std::fs::remove_file(&errors).map_err(|e| Error::io(&errors, e))?;
        }
    } else {
        let mut text = String::from("dataset,method,replication,note\n");
        for f in &failures {
            let note = f.note.replace('"', "'").replace('\n', " ");
            text.push_str(&format!("{},{},{},\"{}\"\n", cfg.name, f.method, f.replication, note));
        }
        std::fs::write(&errors, text).map_err(|e| Error::io(&errors, e))?;
    }
    Ok(RunSummary {
        records,
        failures,
        ran,
        resumed,
    })
}

/// Mean and standard error of one `(method, metric)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; `None` below two values.
    pub se: Option<f64>,
}

/// Aggregates records in first-appearance order of `(method, metric)`.
pub fn aggregate(records: &[Record]) -> Vec<Summary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (r.method.clone(), r.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, metric)| {
            let v: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method && r.metric == metric)
                .filter_map(|r| r.value)
                .collect();
            let count = v.len();
            let mean = if count == 0 { f64::NAN } else { v.iter().sum::<f64>() / count as f64 };
            let se = (count >= 2).then(|| {
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            });
            Summary {
                method,
                metric,
                count,
                mean,
                se,
            }
        })
        .collect()
}

/// Head-to-head count of one method against another on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct WinCount {
    pub method: String,
    pub other: String,
    /// Paired runs where `method` scored strictly higher.
    pub wins: usize,
    pub ties: usize,
    /// Runs (dataset, setting, replication) where both have a value.
    pub paired: usize,
}

/// Strict pairwise wins on `metric` for every ordered pair of methods, in
/// first-appearance order. Runs are paired by dataset, setting and
/// replication; ties are counted separately, not as wins.
pub fn win_counts(records: &[Record], metric: &str) -> Vec<WinCount> {
    use std::collections::BTreeMap;
    let mut methods: Vec<&str> = Vec::new();
    let mut values: BTreeMap<(&str, &str, usize, &str), f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if let Some(v) = r.value {
            values.insert((&r.dataset, &r.setting, r.replication, &r.method), v);
        }
    }
    let runs: BTreeSet<(&str, &str, usize)> = values.keys().map(|&(d, s, r, _)| (d, s, r)).collect();
    let mut out = Vec::new();
    for &a in &methods {
        for &b in &methods {
            if a == b {
                continue;
            }
            let mut c = WinCount {
                method: a.to_string(),
                other: b.to_string(),
                wins: 0,
                ties: 0,
                paired: 0,
            };
            for &(d, s, r) in &runs {
                if let (Some(x), Some(y)) = (values.get(&(d, s, r, a)), values.get(&(d, s, r, b))) {
                    c.paired += 1;
                    c.wins += (x > y) as usize;
                    c.ties += (x == y) as usize;
                }
            }
            out.push(c);
        }
    }
    out
}
